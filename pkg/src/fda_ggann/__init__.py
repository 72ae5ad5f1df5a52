"""
FDA-GGANN - program classification over FDA graphs with a gated graph attention network
"""

__version__ = "0.1.0"
