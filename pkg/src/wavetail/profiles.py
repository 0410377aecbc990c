"""Closed-form radial coefficients with declared symbol orders.

A profile is a function a(r) on [0, inf) given by an exact symbolic
expression, together with a declared decay order mu.  The symbol bound

    sup_r <r>^(mu+k) |d^k a / dr^k| < inf,   k = 0..4,

is what the rest of the package relies on; `symbol_order_check` tests it
on a grid.  Derivatives are always exact (symbolic), never finite
differences, so order checks are not polluted by differentiation noise.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import sympy as sp

from .errors import InvalidProfileError

R_SYM = sp.Symbol("r", nonnegative=True)

_BRACKET = sp.sqrt(1 + R_SYM**2)


def _as_float(x):
    return float(sp.nsimplify(x)) if isinstance(x, sp.Expr) else float(x)


class RadialProfile:
    """Radial coefficient a(r) of declared decay order ``order``.

    Parameters
    ----------
    expr : sympy expression in ``profiles.R_SYM``
    order : float
        Declared decay order mu >= 0: a is expected to satisfy
        |d^k a| <= C_k <r>^(-mu-k).
    kind : str
        Family tag, e.g. ``"power_law"``, ``"bump"``, ``"sum"``.
    params : dict, optional
        Construction parameters, kept for serialization.
    """

    MAX_DERIV = 4

    def __init__(self, expr, order, kind="custom", params=None):
        self.expr = sp.sympify(expr)
        self.order = float(order)
        if self.order < 0:
            raise ValueError("decay order must be >= 0")
        self.kind = kind
        self.params = dict(params or {})
        self._derivs = {0: self.expr}
        self._funcs = {}

    # -- construction ---------------------------------------------------

    @classmethod
    def zero(cls):
        return cls(sp.Integer(0), order=0.0, kind="zero")

    @classmethod
    def constant(cls, value):
        return cls(sp.Float(value), order=0.0, kind="constant",
                   params={"value": value})

    @classmethod
    def power_law(cls, amplitude, order):
        """A (1+r^2)^(-mu/2): smooth at r = 0, exact order mu."""
        mu = sp.Rational(sp.nsimplify(order, rational=True))
        expr = amplitude * (1 + R_SYM**2) ** (-mu / 2)
        return cls(expr, order=order, kind="power_law",
                   params={"amplitude": amplitude, "order": order})

    @classmethod
    def odd_power_law(cls, amplitude, order):
        """A r (1+r^2)^(-(mu+1)/2): odd in r, order mu; for dt-dr couplings."""
        mu = sp.Rational(sp.nsimplify(order, rational=True))
        expr = amplitude * R_SYM * (1 + R_SYM**2) ** (-(mu + 1) / 2)
        return cls(expr, order=order, kind="odd_power_law",
                   params={"amplitude": amplitude, "order": order})

    @classmethod
    def gaussian(cls, amplitude, width=1.0, order=0.0):
        """A exp(-(r/w)^2); passes any polynomial order, tagged with `order`."""
        expr = amplitude * sp.exp(-(R_SYM / width) ** 2)
        return cls(expr, order=order, kind="gaussian",
                   params={"amplitude": amplitude, "width": width,
                           "order": order})

    @classmethod
    def bump(cls, amplitude, radius=1.0, order=0.0):
        """Compactly supported bump A exp(1 - 1/(1-(r/w)^2)) on r < w."""
        s = (R_SYM / radius) ** 2
        core = amplitude * sp.exp(1 - 1 / (1 - s))
        expr = sp.Piecewise((core, s < 1), (0, True))
        return cls(expr, order=order, kind="bump",
                   params={"amplitude": amplitude, "radius": radius,
                           "order": order})

    # -- algebra --------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, RadialProfile):
            return RadialProfile(self.expr + other.expr,
                                 order=min(self.order, other.order),
                                 kind="sum")
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, RadialProfile):
            return RadialProfile(self.expr * other.expr,
                                 order=self.order + other.order, kind="product")
        return RadialProfile(other * self.expr, order=self.order,
                             kind=self.kind, params=self.params)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1)

    def is_zero(self):
        return sp.simplify(self.expr) == 0

    # -- evaluation -----------------------------------------------------

    def _func(self, k):
        if k not in self._funcs:
            if k not in self._derivs:
                self._derivs[k] = sp.diff(self.expr, R_SYM, k)
            self._funcs[k] = sp.lambdify(R_SYM, self._derivs[k],
                                         modules=["numpy"])
        return self._funcs[k]

    def __call__(self, r, k=0):
        """Evaluate the k-th derivative at radii ``r`` (array or scalar)."""
        if k > self.MAX_DERIV:
            raise ValueError(f"derivatives available up to order "
                             f"{self.MAX_DERIV}, requested {k}")
        r_arr = np.asarray(r, dtype=float)
        scalar = r_arr.ndim == 0
        r_arr = np.atleast_1d(r_arr)
        with np.errstate(all="ignore"):
            vals = np.broadcast_to(np.asarray(self._func(k)(r_arr), dtype=float),
                                   r_arr.shape).copy()
        bad = ~np.isfinite(vals)
        if bad.any():
            # removable singularities (derived coefficients hold 0/0 at r=0)
            with np.errstate(all="ignore"):
                vals[bad] = self._func(k)(np.maximum(r_arr[bad], 1e-9))
        return vals[0] if scalar else vals

    def deriv(self, k=1):
        """Return the k-th derivative as a new profile (order mu + k)."""
        expr = sp.diff(self.expr, R_SYM, k)
        return RadialProfile(expr, order=self.order + k, kind="derivative")

    # -- serialization --------------------------------------------------

    def to_dict(self):
        d = {"kind": self.kind, "order": self.order}
        if self.kind in ("power_law", "odd_power_law", "gaussian", "bump",
                         "constant", "zero"):
            d["params"] = self.params
        else:
            d["expr"] = sp.srepr(self.expr)
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d["kind"]
        if kind == "zero":
            return cls.zero()
        if kind in ("power_law", "odd_power_law", "gaussian", "bump",
                    "constant"):
            return getattr(cls, kind)(**d["params"])
        return cls(sp.sympify(d["expr"]), order=d["order"], kind=kind)

    def __repr__(self):
        return f"RadialProfile({self.kind}, order={self.order}, {self.expr})"


@dataclasses.dataclass
class SymbolOrderReport:
    """Result of a symbol-order scan; ``ratios[k]`` = sup <r>^(mu+k)|d^k a|."""

    order: float
    ratios: dict
    growth: dict
    passed: bool

    def __bool__(self):
        return self.passed


def default_check_grid(rmax=2000.0, per_decade=48):
    """Grid [0, rmax] used for symbol checks: 0 plus log-spaced points."""
    n = max(int(per_decade * math.log10(rmax / 1e-3)), 16)
    return np.concatenate([[0.0], np.geomspace(1e-3, rmax, n)])


def symbol_order_check(profile, order=None, kmax=4, grid=None,
                       growth_tol=0.05):
    """Scan sup_r <r>^(mu+k) |d^k a(r)| for k <= kmax.

    Passes when every ratio is finite and grows by less than
    ``growth_tol`` (relatively) when the outer radius is doubled.

    Raises
    ------
    InvalidProfileError
        If the profile evaluates to non-finite values.
    """
    mu = profile.order if order is None else float(order)
    if grid is None:
        grid = default_check_grid()
    grid = np.asarray(grid, dtype=float)
    if grid.max() < 1e3:
        raise ValueError("check grid must extend to r >= 1e3")
    kmax = min(int(kmax), RadialProfile.MAX_DERIV)

    doubled = np.concatenate([grid, np.geomspace(grid.max(), 2 * grid.max(), 32)])
    ratios, growth = {}, {}
    passed = True
    for k in range(kmax + 1):
        vals = profile(grid, k=k)
        if not np.all(np.isfinite(vals)):
            raise InvalidProfileError(
                f"profile {profile.kind} non-finite at derivative order {k}")
        w = (1.0 + grid**2) ** ((mu + k) / 2.0)
        ratio = float(np.max(w * np.abs(vals)))
        vals2 = profile(doubled, k=k)
        w2 = (1.0 + doubled**2) ** ((mu + k) / 2.0)
        ratio2 = float(np.max(w2 * np.abs(vals2)))
        rel_growth = (ratio2 - ratio) / ratio if ratio > 0 else 0.0
        ratios[k], growth[k] = ratio, rel_growth
        if not np.isfinite(ratio) or rel_growth > growth_tol:
            passed = False
    return SymbolOrderReport(order=mu, ratios=ratios, growth=growth,
                             passed=passed)
