"""
Main application entry point
Puts backend/ on the path and runs the ride command line.
"""
import sys
import os

# Add backend to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "backend"))

from ride.main import main

if __name__ == "__main__":
    main()
