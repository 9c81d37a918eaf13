"""Extended Newton-Raphson and corrected Gauss-Newton solvers with a 1-D hyperelastic bar testbed."""
__version__ = "0.1.0"
