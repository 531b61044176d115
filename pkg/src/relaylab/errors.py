"""Exception types shared across the package."""


class DegenerateEstimation(ArithmeticError):
    """A closed form or normalization is undefined for the given variances.

    Parameters
    ----------
    message : str
        Human readable description.
    vanished : tuple of str
        Names of the variances whose vanishing caused the degeneracy,
        e.g. ``("sigma_h_err", "sigma_g_err")``.
    """

    def __init__(self, message, vanished=()):
        super().__init__(message)
        self.vanished = tuple(vanished)


class NumericalError(ArithmeticError):
    """A linear solve or an internal consistency check exceeded tolerance."""
