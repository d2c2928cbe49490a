"""Higher-order isogeometric Kirchhoff-Love shells on trimmed spline patches."""
__version__ = "0.1.0"
