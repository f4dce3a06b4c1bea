"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class SolverError(RuntimeError):
    """Numerical solver failed to locate a solution."""


class RegimeChangeError(RuntimeError):
    """Finite-difference step crossed a constraint-regime boundary."""


class IdentificationError(RuntimeError):
    """Sign restrictions admit no rotation angle."""


class CollinearityError(ValueError):
    """A regressor of interest is collinear with the rest of the design."""


class ConvergenceError(RuntimeError):
    """Iterative algorithm exhausted its sweep budget."""
