"""
Core engines for the damped SPDE laboratory
"""
