"""Learning READ/WRITE policies for simultaneous translation from oracle action sequences."""

__version__ = "0.1.0"
