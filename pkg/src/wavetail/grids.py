"""Graded radial grids and complex-valued grid functions."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.interpolate import CubicSpline


def radial_grid(rmin=1e-3, rmax=200.0, per_decade=32):
    """Geometric grid on (0, rmax], dense near the origin in log scale."""
    if rmin <= 0 or rmax <= rmin:
        raise ValueError("need 0 < rmin < rmax")
    n = max(int(math.ceil(per_decade * math.log10(rmax / rmin))) + 1, 8)
    return np.geomspace(rmin, rmax, n)


def default_rmax(sigma, base=200.0):
    """Outer radius policy: base / min(1, |sigma|), capped for overflow."""
    s = abs(sigma)
    rmax = base if s >= 1.0 else base / max(s, 1e-3)
    im = float(np.imag(sigma))
    if im > 0:
        rmax = min(rmax, 600.0 / im)
    return max(rmax, base)


@dataclasses.dataclass
class GridFunction:
    """Complex samples of a mode-``ell`` function on a radial grid.

    ``deriv`` optionally carries d/dr samples (solver output provides
    them exactly; they make first-order operator application cheap).
    """

    r: np.ndarray
    values: np.ndarray
    ell: int = 0
    deriv: np.ndarray | None = None

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.r.ndim != 1 or self.r.shape != self.values.shape:
            raise ValueError("r and values must be matching 1-d arrays")
        if np.any(np.diff(self.r) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")
        if self.deriv is not None:
            self.deriv = np.asarray(self.deriv, dtype=complex)

    @classmethod
    def from_callable(cls, f, r, ell=0, df=None):
        r = np.asarray(r, dtype=float)
        vals = np.asarray(f(r), dtype=complex)
        dv = np.asarray(df(r), dtype=complex) if df is not None else None
        return cls(r=r, values=vals, ell=ell, deriv=dv)

    def interpolator(self):
        """Cubic spline in log r, zero outside the sampled range."""
        x = np.log(self.r)
        re = CubicSpline(x, self.values.real, extrapolate=False)
        im = CubicSpline(x, self.values.imag, extrapolate=False)

        def f(r):
            r = np.asarray(r, dtype=float)
            scalar = r.ndim == 0
            xq = np.log(np.maximum(np.atleast_1d(r), 1e-300))
            out = np.nan_to_num(re(xq)) + 1j * np.nan_to_num(im(xq))
            return out[0] if scalar else out

        return f

    def restrict(self, rmax):
        m = self.r <= rmax
        return GridFunction(self.r[m], self.values[m], ell=self.ell,
                            deriv=None if self.deriv is None
                            else self.deriv[m])

    def sup_norm(self, rmax=None):
        g = self if rmax is None else self.restrict(rmax)
        return float(np.max(np.abs(g.values)))

    def weighted_sup(self, weight_power=1.0, rmax=None):
        """sup <r>^p |v|; p = 1 flattens outgoing 1/r falloff."""
        g = self if rmax is None else self.restrict(rmax)
        w = (1.0 + g.r**2) ** (weight_power / 2.0)
        return float(np.max(w * np.abs(g.values)))

    def l2_norm(self, rmax=None):
        """L2 with the metric volume form r^2 dr."""
        g = self if rmax is None else self.restrict(rmax)
        return float(np.sqrt(np.trapezoid(np.abs(g.values) ** 2 * g.r**2,
                                          g.r)))

    def __add__(self, other):
        self._check_compatible(other)
        return GridFunction(self.r, self.values + other.values, ell=self.ell)

    def __sub__(self, other):
        self._check_compatible(other)
        return GridFunction(self.r, self.values - other.values, ell=self.ell)

    def __mul__(self, scalar):
        return GridFunction(self.r, scalar * self.values, ell=self.ell,
                            deriv=None if self.deriv is None
                            else scalar * self.deriv)

    __rmul__ = __mul__

    def _check_compatible(self, other):
        if not isinstance(other, GridFunction):
            raise TypeError("expected a GridFunction")
        if self.r.shape != other.r.shape or \
                not np.allclose(self.r, other.r, rtol=1e-12):
            raise ValueError("grid functions live on different grids")


def estimate_tail_exponent(r, values, decades=1.0):
    """Log-log slope of |values| over the outermost ``decades`` of the grid.

    Negative slopes mean decay; -inf is returned when the tail sits at
    the numerical noise floor (effectively compact data).
    """
    r = np.asarray(r, dtype=float)
    a = np.abs(np.asarray(values))
    peak = a.max()
    if peak == 0:
        return -math.inf
    mask = r >= r.max() / 10**decades
    rr, aa = r[mask], a[mask]
    good = aa > 1e-13 * peak
    if good.sum() < 4:
        return -math.inf
    slope = np.polyfit(np.log(rr[good]), np.log(aa[good]), 1)[0]
    return float(slope)
