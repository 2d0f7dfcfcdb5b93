"""
Depth completion toolkit: sparse range measurements to dense depth maps,
guided by a registered color image.
"""
__version__ = "1.0.0"
