"""
Utility helpers shared by every offgrid package (logging setup).
"""
