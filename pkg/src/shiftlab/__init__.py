"""shiftlab: desk-scale spectral experiments on subshifts of finite type."""

__version__ = "0.1.0"
