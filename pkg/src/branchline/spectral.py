"""Grid approximation of the continuous Fourier transform and band bookkeeping.

Coefficients approximate ``X(w) = integral exp(-i w t) x(t) dt`` by the
Riemann sum ``dt * sum_p x[p] exp(-i w_j (t0 + p dt))`` at ``w_j = j dw``,
so values carry the ``dt`` factor and the ``t0`` phase and can be compared
with closed-form transforms directly.  Bins are stored in ascending order,
``j = -n/2 .. n/2-1``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, InvalidData
from .model import Grid, Signal


class EmptyBandWarning(UserWarning):
    """A band selects no frequency bin of the grid."""


@dataclass(frozen=True)
class Spectrum:
    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.shape[0] != self.grid.n:
            raise InvalidData(f"spectrum has {c.size} coefficients, grid expects {self.grid.n}")
        if not np.all(np.isfinite(c)):
            raise InvalidData("spectrum coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def omegas(self) -> np.ndarray:
        return self.grid.omegas

    def __sub__(self, other: "Spectrum") -> "Spectrum":
        return difference_spectrum(self, other)


@dataclass(frozen=True)
class FrequencyBand:
    """Open frequency interval ``(center - half_width, center + half_width)``."""

    center: float
    half_width: float

    def __post_init__(self):
        if not (math.isfinite(self.center) and self.half_width > 0):
            raise InvalidArgument("band needs a finite centre and a positive half width")

    @property
    def lo(self) -> float:
        return self.center - self.half_width

    @property
    def hi(self) -> float:
        return self.center + self.half_width

    def mask(self, grid: Grid, mirrored: bool = False) -> np.ndarray:
        """Bins strictly inside the band, in ascending bin order.

        ``mirrored`` adds the bins of the conjugate band, using the grid's own
        pairing ``j <-> -j mod n`` so that a real signal stays real.
        """
        w = grid.omegas
        m = (w > self.lo) & (w < self.hi)
        if mirrored:
            m = m | mirror_mask(m)
        return m

    def to_dict(self) -> dict:
        return {"center": self.center, "half_width": self.half_width}


def mirror_mask(mask: np.ndarray) -> np.ndarray:
    """Image of an ascending-order bin mask under ``j -> -j (mod n)``."""
    fft_order = np.fft.ifftshift(mask)
    flipped = np.roll(fft_order[::-1], 1)
    return np.fft.fftshift(flipped)


def _phase(grid: Grid) -> np.ndarray:
    return np.exp(-1j * grid.omegas * grid.t0)


def forward_array(x: np.ndarray, grid: Grid) -> np.ndarray:
    """Continuous-scaled transform of the last axis of ``x`` (no validation)."""
    X = np.fft.fftshift(np.fft.fft(x, axis=-1), axes=-1)
    return grid.dt * _phase(grid) * X


def inverse_array(X: np.ndarray, grid: Grid) -> np.ndarray:
    Y = np.fft.ifftshift(X / (grid.dt * _phase(grid)), axes=-1)
    return np.fft.ifft(Y, axis=-1)


def forward_transform(x: Signal) -> Spectrum:
    return Spectrum(x.grid, forward_array(x.samples, x.grid))


def inverse_transform(X: Spectrum) -> Signal:
    return Signal(X.grid, inverse_array(X.coeffs, X.grid))


def difference_spectrum(Xk: Spectrum, Xd: Spectrum) -> Spectrum:
    """Coefficient-wise ``Xk - Xd``."""
    if Xk.grid != Xd.grid:
        raise InvalidArgument("spectra live on different grids")
    return Spectrum(Xk.grid, Xk.coeffs - Xd.coeffs)


def band_energy(X: Spectrum, band, mirrored: bool = False) -> float:
    """``(1/2pi) * sum |X_j|^2 dw`` over the band's bins.

    ``band`` is a :class:`FrequencyBand` or a boolean bin mask.  An empty
    selection returns 0.0 and emits :class:`EmptyBandWarning`.
    """
    if isinstance(band, FrequencyBand):
        mask = band.mask(X.grid, mirrored)
    else:
        mask = np.asarray(band, dtype=bool)
        if mask.shape != (X.grid.n,):
            raise InvalidArgument("band mask does not match the grid")
    if not mask.any():
        warnings.warn("band selects no grid frequency bins", EmptyBandWarning, stacklevel=2)
        return 0.0
    return float(np.sum(np.abs(X.coeffs[mask]) ** 2) * X.grid.d_omega / (2 * math.pi))


def l2_norm(x: np.ndarray, grid: Grid) -> float:
    """Discrete L2 norm ``sqrt(dt * sum |x|^2)``."""
    return math.sqrt(grid.dt * float(np.sum(np.abs(x) ** 2)))
