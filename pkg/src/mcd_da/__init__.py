"""Maximum classifier discrepancy domain adaptation on a small numpy autograd."""

__version__ = "0.1.0"
