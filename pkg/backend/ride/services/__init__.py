"""
Services: the image model, its training and storage, sensing, inference,
image I/O and metrics
"""
