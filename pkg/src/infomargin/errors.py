"""Exception types shared across the package.

The CLI maps these onto exit codes: InputError -> 2, NumericalError -> 3.
"""


class InputError(ValueError):
    """Malformed or out-of-contract input (bad dimensions, bad files, bad flags)."""


class NumericalError(RuntimeError):
    """A numerical routine failed (eigendecomposition, overflow, divergence)."""


class TrainingDivergedError(NumericalError):
    """Training produced a non-finite loss."""
