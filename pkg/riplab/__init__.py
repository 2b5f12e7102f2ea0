# riplab: rank-one unit-modulus measurements for low-rank matrix sensing

__version__ = "0.1.0"
