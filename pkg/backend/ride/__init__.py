"""
RIDE image prior and MAP recovery engines
"""
