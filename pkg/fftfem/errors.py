"""Exception hierarchy shared by all fftfem modules."""

from typing import Optional, Tuple


class FftFemError(Exception):
    """Base class of all errors raised by fftfem."""


class InvalidOrderError(FftFemError, ValueError):
    """The element order is outside the supported range."""


class ShapeMismatchError(FftFemError, ValueError):
    """An array does not have the extent implied by its mesh or basis."""


class UnsupportedLengthError(FftFemError, ValueError):
    """The FFT primitive was asked for a length it does not handle."""


class NumericalError(FftFemError):
    """A numerical assumption of the method does not hold.

    The command-line front end maps this family to exit code 2.
    """


class NonSimpleSpectrumError(NumericalError):
    """Two eigenvalues of an element pencil coincide."""


class PoleProximityError(NumericalError):
    """An evaluation point lies on (or too close to) an interior eigenvalue."""


class SecularSolveError(NumericalError):
    """The secular equation could not be solved for all of its roots."""


class IndefiniteShiftError(NumericalError):
    """A shifted 1D system ``4h^-2 A + mu C`` is not positive definite."""

    def __init__(
        self, mu: float, index: Optional[Tuple[int, ...]] = None, detail: str = ""
    ):
        self.mu = mu
        self.index = index
        where = "" if index is None else f" at spectral index {index}"
        msg = f"Indefinite shift mu={mu!r}{where}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class IndefiniteOperatorError(NumericalError):
    """A spectral denominator of the full diagonalization is not positive."""

    def __init__(self, value: float, index: Tuple[int, ...]):
        self.value = value
        self.index = index
        super().__init__(
            f"Non-positive spectral denominator {value!r} at index {index}; "
            "the reaction coefficient violates the positivity bound"
        )
