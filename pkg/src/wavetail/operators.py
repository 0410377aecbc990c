"""Model metrics, the reduced wave operator, and its angular-mode reduction.

The stationary operator handled throughout is

    P = dt^2 - Lap + dt P1 + P2,
    P1 = a1(r) dr + b1(r),
    P2 = c2(r) dr^2 + (2/r) c2(r) dr + d2(r) dr + e2(r) + f2(r) r^-2 LapSph,

with a1, c2, f2 of symbol order kappa, b1, d2 of order kappa+1 and e2 of
order kappa+2.  The (2/r) c2 first-order piece is tied structurally to c2
(it is what a smooth second-order perturbation of the Laplacian produces
in polar form), so every *stored* coefficient is a regular profile of its
declared order.  LapSph acts as -l(l+1) on the l-th spherical mode.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math

import numpy as np
import sympy as sp

from .errors import DegenerateMetricError, OrderViolationError, \
    UnsupportedHalfPlaneError
from .profiles import R_SYM, RadialProfile, symbol_order_check

_COEFF_ORDER_SHIFTS = {"a1": 0, "b1": 1, "c2": 0, "d2": 1, "e2": 2, "f2": 0}


@dataclasses.dataclass
class SphericalMetric:
    """Spherically symmetric stationary perturbation of the flat metric.

    Line element (one consistent instantiation of the diagonal ansatz):

        g = (1+h00) dt^2 + 2 h0r dt dr - (1+hrr) dr^2 - r^2 (1+hww) dOmega^2

    with every h-profile of order kappa and the potential V of order
    kappa+2.  kappa must lie in (1, inf) minus the integers.
    """

    kappa: float
    h00: RadialProfile
    hrr: RadialProfile
    hww: RadialProfile
    h0r: RadialProfile
    V: RadialProfile

    @classmethod
    def flat(cls, kappa=1.5):
        z = RadialProfile.zero
        return cls(kappa=kappa, h00=z(), hrr=z(), hww=z(), h0r=z(), V=z())

    @classmethod
    def diagonal(cls, kappa, amp00=0.0, amp_rr=0.0, amp_v=0.0):
        """Convenience family: h00, hrr = hww power laws plus a potential."""
        z = RadialProfile.zero()
        h00 = RadialProfile.power_law(amp00, kappa) if amp00 else z
        hrr = RadialProfile.power_law(amp_rr, kappa) if amp_rr else z
        V = RadialProfile.power_law(amp_v, kappa + 2) if amp_v else z
        return cls(kappa=kappa, h00=h00, hrr=hrr, hww=hrr, h0r=z, V=V)

    def validate(self, grid=None):
        """Check the hypotheses: kappa non-integer, spacelike slices,
        origin regularity (hrr(0) = hww(0), h0r(0) = 0)."""
        if self.kappa <= 1 or float(self.kappa).is_integer():
            raise DegenerateMetricError(
                f"kappa must lie in (1, inf) \\ N, got {self.kappa}")
        if grid is None:
            grid = np.geomspace(1e-3, 1e3, 200)
        for name in ("hrr", "hww"):
            if np.any(1.0 + getattr(self, name)(grid) <= 0):
                raise DegenerateMetricError(
                    f"induced spatial metric not positive definite ({name})")
        if abs(self.hrr(0.0) - self.hww(0.0)) > 1e-12:
            raise DegenerateMetricError(
                "origin regularity requires hrr(0) == hww(0)")
        if abs(self.h0r(0.0)) > 1e-12:
            raise DegenerateMetricError("h0r must vanish at r = 0")
        return True

    def to_dict(self):
        return {"kappa": self.kappa,
                **{k: getattr(self, k).to_dict()
                   for k in ("h00", "hrr", "hww", "h0r", "V")}}


class ReducedOperator:
    """The stationary operator P as coefficient profiles plus kappa."""

    COEFFS = ("a1", "b1", "c2", "d2", "e2", "f2")

    def __init__(self, kappa, a1=None, b1=None, c2=None, d2=None, e2=None,
                 f2=None, check_orders=True):
        self.kappa = float(kappa)
        z = RadialProfile.zero
        self.a1 = a1 or z()
        self.b1 = b1 or z()
        self.c2 = c2 or z()
        self.d2 = d2 or z()
        self.e2 = e2 or z()
        self.f2 = f2 or z()
        if check_orders:
            self.check_symbol_orders()

    @classmethod
    def flat(cls, kappa=1.5):
        return cls(kappa=kappa, check_orders=False)

    def declared_order(self, name):
        return self.kappa + _COEFF_ORDER_SHIFTS[name]

    def is_flat(self):
        return all(getattr(self, n).is_zero() for n in self.COEFFS)

    def check_symbol_orders(self, kmax=2):
        """Every coefficient must pass its declared-order scan."""
        for name in self.COEFFS:
            prof = getattr(self, name)
            if prof.is_zero():
                continue
            rep = symbol_order_check(prof, order=self.declared_order(name),
                                     kmax=kmax)
            if not rep.passed:
                raise OrderViolationError(
                    f"coefficient {name} violates declared order "
                    f"{self.declared_order(name)}: growth {rep.growth}")
        return True

    # -- serialization / hashing ----------------------------------------

    def to_dict(self):
        return {"kappa": self.kappa,
                **{n: getattr(self, n).to_dict() for n in self.COEFFS}}

    @classmethod
    def from_dict(cls, d, check_orders=False):
        coeffs = {n: RadialProfile.from_dict(d[n]) for n in cls.COEFFS}
        return cls(kappa=d["kappa"], check_orders=check_orders, **coeffs)

    def content_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclasses.dataclass
class RadialModeOperator:
    """Second-order radial ODE  alpha u'' + beta u' + gamma u  for one mode.

    Obtained from P by dt -> -i sigma and LapSph -> -l(l+1).  beta and
    gamma are polynomial in sigma; the components are kept separate so the
    sigma-dependence stays inspectable.
    """

    ell: int
    sigma: complex
    op: ReducedOperator

    def __post_init__(self):
        if self.ell < 0:
            raise ValueError("mode number must be >= 0")
        if np.imag(self.sigma) < -1e-14:
            raise UnsupportedHalfPlaneError(
                f"Im sigma >= 0 required, got {self.sigma}")

    # sigma-free coefficient components
    def alpha(self, r):
        return -1.0 + self.op.c2(r) + 0j

    def beta0(self, r):
        r = np.asarray(r, dtype=float)
        return (-2.0 / r) * (1.0 - self.op.c2(r)) + self.op.d2(r) + 0j

    def beta1(self, r):
        return -1j * self.op.a1(r)

    def gamma0(self, r):
        r = np.asarray(r, dtype=float)
        lterm = self.ell * (self.ell + 1) / r**2
        return (1.0 - self.op.f2(r)) * lterm + self.op.e2(r) + 0j

    def gamma1(self, r):
        return -1j * self.op.b1(r)

    def beta(self, r):
        return self.beta0(r) + self.sigma * self.beta1(r)

    def gamma(self, r):
        return self.gamma0(r) + self.sigma * self.gamma1(r) - self.sigma**2

    def apply(self, r, u, du, d2u):
        """Evaluate (P_(sigma,l) u)(r) from u and its radial derivatives."""
        return self.alpha(r) * d2u + self.beta(r) * du + self.gamma(r) * u


def mode_reduce(op, ell, sigma):
    """Reduce P to the mode-``ell`` radial operator at spectral value sigma."""
    return RadialModeOperator(ell=int(ell), sigma=complex(sigma), op=op)


def build_operator(metric, check_orders=True, simplify=True):
    """Expand the divergence-form wave operator of ``metric`` into P.

    The d'Alembertian of the spherically symmetric ansatz is divided by
    g^tt so the dt^2 coefficient is one, and the spatial terms are
    collected into the P1/P2 coefficient shape.  The flat metric maps to
    exactly zero perturbation coefficients.
    """
    metric.validate()
    r = R_SYM
    g_tt = 1 + metric.h00.expr
    g_tr = metric.h0r.expr
    g_rr = -(1 + metric.hrr.expr)
    w = 1 + metric.hww.expr

    det2 = g_tt * g_rr - g_tr**2        # Lorentzian block, negative
    itt = g_rr / det2                   # inverse metric components
    itr = -g_tr / det2
    irr = g_tt / det2
    W = r**2 * w * sp.sqrt(-det2)       # sqrt(|g|) with sin(theta) dropped

    a1 = 2 * itr / itt
    b1 = sp.diff(W * itr, r) / (W * itt)
    c2 = irr / itt + 1
    d2_full = sp.diff(W * irr, r) / (W * itt) + 2 / r
    d2 = d2_full - (2 / r) * c2         # regular part; (2/r) c2 is structural
    e2 = metric.V.expr / itt
    f2 = 1 - 1 / (itt * w)

    exprs = {"a1": a1, "b1": b1, "c2": c2, "d2": d2, "e2": e2, "f2": f2}
    if simplify:
        exprs = {k: sp.cancel(sp.together(v)) for k, v in exprs.items()}
    kappa = metric.kappa
    profiles = {
        name: RadialProfile(expr, order=kappa + _COEFF_ORDER_SHIFTS[name],
                            kind=f"derived_{name}")
        for name, expr in exprs.items()
    }
    # exact zeros for unperturbed directions keep the flat case exact
    for name, prof in profiles.items():
        if sp.simplify(prof.expr) == 0:
            profiles[name] = RadialProfile.zero()

    # g^tt must not vanish: sample it
    grid = np.geomspace(1e-3, 1e3, 200)
    itt_vals = sp.lambdify(r, itt, modules=["numpy"])(grid)
    if np.any(~np.isfinite(np.atleast_1d(itt_vals))) or \
            np.any(np.atleast_1d(itt_vals) <= 0):
        raise DegenerateMetricError("g^tt vanishes or changes sign on grid")

    return ReducedOperator(kappa=kappa, check_orders=check_orders, **profiles)
