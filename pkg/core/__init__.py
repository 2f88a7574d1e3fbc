"""
Numerical core: Gaussian knowledge algebra, dense networks and the training losses
"""
