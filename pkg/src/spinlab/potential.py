"""Single-site potentials with an explicit convex-core / bounded-perturbation split.

Every analytic potential carries a decomposition

    psi(x) = psi_c(x) + delta_psi(x),
    psi_c''(x) >= c * (1 + |x|**(p - 2)),
    sup|delta_psi| and sup|delta_psi'| finite,

stored together with the growth exponent p >= 2 and the core convexity
constant c > 0. Tabulated potentials (the output of renormalization) carry a
uniform grid of values and answer derivative queries by cubic-spline
interpolation (orders 0 and 1) and centered second differences (order 2).

Shipped analytic families:

* ``gaussian``                x**2 / 2
* ``quadratic-plus-power``    a*x**2/2 + b*|x|**p
* ``quadratic-plus-cosine``   a*x**2/2 + eps*cos(x)
* ``double-well``             (x**2 - 1)**2
* ``custom-tabulated``        user supplied core/perturbation callables

The double-well potential is non-convex, so its core is built constructively:
psi_c solves psi_c'' = 1 + x**2 on [-x1, x1] and equals psi outside, with x1
chosen so that value and slope match at both interval ends. Matching the slope
forces x1**2 = 15/11: integrating psi_c'' = 1 + x**2 across [-x1, x1] must
reproduce the increase of psi' over the same interval, which gives
2*x1 + 2*x1**3/3 = 8*x1**3 - 8*x1. The resulting perturbation is the even bump
delta_psi(x) = (11/12)(x**4 - x1**4) - (5/2)(x**2 - x1**2) on [-x1, x1],
vanishing together with its derivative at +-x1.
"""

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import BoundaryError, DomainError, UnboundedPerturbationError

LOG_UNDERFLOW = 18.0 * math.log(10.0)  # exp(-41.45) < 1e-18


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on [lo, hi] with n nodes (n >= 2)."""

    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("grid requires hi > lo")
        if self.n < 2:
            raise ValueError("grid requires at least 2 nodes")

    @property
    def step(self):
        return (self.hi - self.lo) / (self.n - 1)

    def nodes(self):
        return np.linspace(self.lo, self.hi, self.n)

    def shrink(self, margin):
        """Same step, domain reduced by ``margin`` on both sides."""
        lo, hi = self.lo + margin, self.hi - margin
        n = int(math.floor((hi - lo) / self.step + 1e-9)) + 1
        if n < 2:
            raise ValueError("margin leaves no grid")
        used = (n - 1) * self.step
        mid = 0.5 * (lo + hi)
        return GridSpec(mid - used / 2, mid + used / 2, n)


@dataclass(frozen=True)
class PotentialSpec:
    """Analytic single-site potential with stored decomposition.

    ``core`` / ``perturbation`` and their derivatives are vectorized
    callables. ``domain_halfwidth`` is the truncation radius used by the
    public evaluation contract; quadrature internals may evaluate the raw
    callables outside it.
    """

    kind: str
    p: float
    c: float
    core: Callable
    core_d1: Callable
    core_d2: Callable
    perturbation: Callable
    perturbation_d1: Callable
    perturbation_d2: Optional[Callable]
    domain_halfwidth: float
    perturbation_sup: float
    perturbation_d1_sup: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("growth exponent p must be >= 2")
        if not self.c > 0:
            raise ValueError("core convexity constant c must be positive")
        if not self.domain_halfwidth > 0:
            raise ValueError("domain_halfwidth must be positive")

    # Raw (unchecked) evaluation, used by quadrature internals.
    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self.core(x) + self.perturbation(x)

    def d1(self, x):
        x = np.asarray(x, dtype=float)
        return self.core_d1(x) + self.perturbation_d1(x)

    def d2(self, x):
        if self.perturbation_d2 is None:
            raise DomainError(
                f"{self.kind} potential has no second derivative for its perturbation"
            )
        x = np.asarray(x, dtype=float)
        return self.core_d2(x) + self.perturbation_d2(x)

    def scalar_value(self, x):
        return float(self.value(x))

    def check_decomposition(self, n_points=100, rel_tol=1e-12):
        """Residual of psi - (psi_c + delta_psi) on a dense grid (identity check)."""
        xs = np.linspace(-self.domain_halfwidth, self.domain_halfwidth, n_points)
        total = self.value(xs)
        resid = total - (self.core(xs) + self.perturbation(xs))
        scale = np.maximum(np.abs(total), 1.0)
        return float(np.max(np.abs(resid) / scale))

    def core_convexity_margin(self, n_points=2001):
        """min over a dense grid of psi_c''(x) - c*(1 + |x|**(p-2))."""
        xs = np.linspace(-self.domain_halfwidth, self.domain_halfwidth, n_points)
        return float(np.min(self.core_d2(xs) - self.c * (1.0 + np.abs(xs) ** (self.p - 2))))


@dataclass
class TabulatedPotential:
    """Grid-sampled potential with spline/difference derivative evaluation."""

    grid: GridSpec
    values: np.ndarray
    p: float
    c: Optional[float] = None
    iteration_count: int = 0
    normalization_offset: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n,):
            raise ValueError("values length must match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("tabulated values must be finite at every node")

    @cached_property
    def spline(self):
        return CubicSpline(self.grid.nodes(), self.values)

    @cached_property
    def spline_d1(self):
        return self.spline.derivative()

    def value(self, x):
        return self.spline(x)

    def d1(self, x):
        return self.spline_d1(x)

    def d2(self, x):
        h = self.grid.step
        s = self.spline
        return (s(x - h) - 2.0 * s(x) + s(x + h)) / (h * h)

    def value_or_inf(self, x):
        """Spline value inside the grid, +inf outside (for samplers)."""
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, np.inf)
        ok = (x >= self.grid.lo) & (x <= self.grid.hi)
        out[ok] = self.spline(x[ok])
        return out if out.shape else float(out)

    def scaled(self, factor):
        c = None if self.c is None else self.c * factor
        return TabulatedPotential(
            grid=self.grid,
            values=self.values * factor,
            p=self.p,
            c=c,
            iteration_count=self.iteration_count,
            normalization_offset=self.normalization_offset * factor,
        )

    def restricted(self, lo, hi):
        """Sub-potential on the nodes inside [lo, hi] (same step)."""
        nodes = self.grid.nodes()
        mask = (nodes >= lo - 1e-12) & (nodes <= hi + 1e-12)
        idx = np.nonzero(mask)[0]
        if len(idx) < 2:
            raise ValueError("restriction leaves fewer than 2 nodes")
        sub = GridSpec(float(nodes[idx[0]]), float(nodes[idx[-1]]), len(idx))
        return TabulatedPotential(
            grid=sub, values=self.values[idx].copy(), p=self.p, c=self.c,
            iteration_count=self.iteration_count,
            normalization_offset=self.normalization_offset,
        )

    def to_json(self):
        return json.dumps({
            "grid_min": self.grid.lo,
            "grid_max": self.grid.hi,
            "n_nodes": self.grid.n,
            "values": [float(v) for v in self.values],
            "p": self.p,
            "c": self.c,
            "iteration_count": self.iteration_count,
            "normalization_offset": self.normalization_offset,
        })

    @staticmethod
    def from_json(text):
        d = json.loads(text)
        return TabulatedPotential(
            grid=GridSpec(d["grid_min"], d["grid_max"], d["n_nodes"]),
            values=np.array(d["values"], dtype=float),
            p=d["p"],
            c=d.get("c"),
            iteration_count=d.get("iteration_count", 0),
            normalization_offset=d.get("normalization_offset", 0.0),
        )


def eval(potential, x, order=0):
    """Evaluate a potential or one of its first two derivatives at ``x``.

    Analytic families answer in closed form; tabulated potentials use
    cubic-spline interpolation (orders 0, 1) and a centered second difference
    at the grid step (order 2). Raises DomainError outside the truncated
    domain and BoundaryError for derivative queries too close to a
    tabulation edge.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    xf = float(x)
    if isinstance(potential, PotentialSpec):
        hw = potential.domain_halfwidth
        if not -hw <= xf <= hw:
            raise DomainError(f"x={xf} outside truncated domain [-{hw}, {hw}]")
        fn = (potential.value, potential.d1, potential.d2)[order]
        return float(fn(xf))
    if isinstance(potential, TabulatedPotential):
        g = potential.grid
        if not g.lo <= xf <= g.hi:
            raise DomainError(f"x={xf} outside tabulation range [{g.lo}, {g.hi}]")
        if order == 0:
            return float(potential.value(xf))
        if order == 1:
            if not g.lo < xf < g.hi:
                raise BoundaryError(f"first derivative needs interior x, got {xf}")
            return float(potential.d1(xf))
        h = g.step
        if not (g.lo + h - 1e-12 <= xf <= g.hi - h + 1e-12):
            raise BoundaryError(
                f"second difference at step {h} undefined within one step of the boundary"
            )
        return float(potential.d2(xf))
    raise TypeError(f"unsupported potential type {type(potential)!r}")


def osc(perturbation, halfwidth=None, n_points=200001):
    """Oscillation sup - inf of a bounded perturbation over the truncated domain.

    Accepts a PotentialSpec (uses its stored perturbation and domain) or a
    vectorized callable together with ``halfwidth``. Raises
    UnboundedPerturbationError when the values keep growing at the domain
    edge instead of flattening out.
    """
    if isinstance(perturbation, PotentialSpec):
        fn = perturbation.perturbation
        hw = perturbation.domain_halfwidth
    else:
        fn = perturbation
        if halfwidth is None:
            raise ValueError("halfwidth required for a bare callable")
        hw = float(halfwidth)
    xs = np.linspace(-hw, hw, n_points)
    vals = np.asarray(fn(xs), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise UnboundedPerturbationError("perturbation is not finite on the domain")
    # unboundedness heuristic: values rising monotonically toward an edge and
    # clearly exceeding the central-half magnitude
    quarter = n_points // 4
    central_max = float(np.abs(vals[quarter:-quarter]).max())
    k = max(16, n_points // 20)
    for tail in (np.abs(vals[:k][::-1]), np.abs(vals[-k:])):
        rising = np.all(np.diff(tail) >= 0) and tail[-1] > tail[0]
        if rising and tail[-1] > 1.5 * central_max + 1e-9:
            raise UnboundedPerturbationError(
                "perturbation grows toward the domain edge; it does not look bounded"
            )
    return float(vals.max() - vals.min())


def _default_halfwidth(core, pad=1.05):
    """Truncation radius where exp(-psi_c) has dropped below 1e-18."""
    xs = np.linspace(-1.0, 1.0, 201)
    vmin = float(np.min(core(xs)))
    r = 1.0
    while r < 1e6:
        if min(float(core(np.asarray(r))), float(core(np.asarray(-r)))) - vmin >= LOG_UNDERFLOW:
            return pad * r
        r *= 1.25
    raise ValueError("could not locate an underflow radius; core grows too slowly")


_ZERO = lambda x: np.zeros_like(np.asarray(x, dtype=float))


def make_gaussian(halfwidth=None):
    """psi(x) = x**2/2; core only, p = 2, c = 1/2."""
    core = lambda x: 0.5 * np.asarray(x, dtype=float) ** 2
    hw = _default_halfwidth(core) if halfwidth is None else float(halfwidth)
    return PotentialSpec(
        kind="gaussian", p=2.0, c=0.5,
        core=core,
        core_d1=lambda x: np.asarray(x, dtype=float),
        core_d2=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        perturbation=_ZERO, perturbation_d1=_ZERO, perturbation_d2=_ZERO,
        domain_halfwidth=hw, perturbation_sup=0.0, perturbation_d1_sup=0.0,
    )


def make_quadratic_plus_power(a=1.0, b=1.0, p=4.0, halfwidth=None):
    """psi(x) = a*x**2/2 + b*|x|**p; core only, c = min(a, b*p*(p-1))."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if p < 2:
        raise ValueError("p must be >= 2")

    def core(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * a * x**2 + b * np.abs(x) ** p

    def core_d1(x):
        x = np.asarray(x, dtype=float)
        return a * x + b * p * np.sign(x) * np.abs(x) ** (p - 1)

    def core_d2(x):
        x = np.asarray(x, dtype=float)
        return a + b * p * (p - 1) * np.abs(x) ** (p - 2)

    hw = _default_halfwidth(core) if halfwidth is None else float(halfwidth)
    return PotentialSpec(
        kind="quadratic-plus-power", p=float(p), c=min(a, b * p * (p - 1)),
        core=core, core_d1=core_d1, core_d2=core_d2,
        perturbation=_ZERO, perturbation_d1=_ZERO, perturbation_d2=_ZERO,
        domain_halfwidth=hw, perturbation_sup=0.0, perturbation_d1_sup=0.0,
        params={"a": a, "b": b},
    )


def make_quadratic_plus_cosine(eps=0.5, a=1.0, halfwidth=None):
    """psi(x) = a*x**2/2 + eps*cos(x); bounded perturbation of a quadratic core."""
    if a <= 0:
        raise ValueError("a must be positive")
    core = lambda x: 0.5 * a * np.asarray(x, dtype=float) ** 2
    hw = _default_halfwidth(core) if halfwidth is None else float(halfwidth)
    return PotentialSpec(
        kind="quadratic-plus-cosine", p=2.0, c=0.5 * a,
        core=core,
        core_d1=lambda x: a * np.asarray(x, dtype=float),
        core_d2=lambda x: a * np.ones_like(np.asarray(x, dtype=float)),
        perturbation=lambda x: eps * np.cos(np.asarray(x, dtype=float)),
        perturbation_d1=lambda x: -eps * np.sin(np.asarray(x, dtype=float)),
        perturbation_d2=lambda x: -eps * np.cos(np.asarray(x, dtype=float)),
        domain_halfwidth=hw, perturbation_sup=abs(eps), perturbation_d1_sup=abs(eps),
        params={"a": a, "eps": eps},
    )


# Matching interval endpoint of the double-well construction; see module
# docstring. Slope consistency across [-x1, x1] forces x1**2 = 15/11.
DOUBLE_WELL_MATCH_POINT = math.sqrt(15.0 / 11.0)
_DW_INNER_CONST = -31.0 / 44.0
DOUBLE_WELL_OSC = 75.0 / 44.0
DOUBLE_WELL_D1_SUP = (10.0 / 3.0) * math.sqrt(5.0 / 11.0)


def make_double_well(halfwidth=None):
    """psi(x) = (x**2 - 1)**2 with the matched-ODE core fill-in.

    The core solves psi_c'' = 1 + x**2 on [-x1, x1] (p = 4, c = 1) and equals
    psi outside, matched in value and slope at +-x1 with x1 = sqrt(15/11).
    The perturbation is supported on [-x1, x1] with
    osc(delta_psi) = 75/44 and sup|delta_psi'| = (10/3)*sqrt(5/11).
    """
    x1 = DOUBLE_WELL_MATCH_POINT
    x1sq = x1 * x1
    x1q = x1sq * x1sq

    def psi(x):
        x = np.asarray(x, dtype=float)
        return (x * x - 1.0) ** 2

    def core(x):
        x = np.asarray(x, dtype=float)
        inner = x**4 / 12.0 + 0.5 * x**2 + _DW_INNER_CONST
        return np.where(np.abs(x) < x1, inner, psi(x))

    def core_d1(x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) < x1, x**3 / 3.0 + x, 4.0 * x**3 - 4.0 * x)

    def core_d2(x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) < x1, 1.0 + x**2, 12.0 * x**2 - 4.0)

    def pert(x):
        x = np.asarray(x, dtype=float)
        bump = (11.0 / 12.0) * (x**4 - x1q) - 2.5 * (x**2 - x1sq)
        return np.where(np.abs(x) < x1, bump, 0.0)

    def pert_d1(x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) < x1, (11.0 / 3.0) * x**3 - 5.0 * x, 0.0)

    def pert_d2(x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) < x1, 11.0 * x**2 - 5.0, 0.0)

    hw = _default_halfwidth(core) if halfwidth is None else float(halfwidth)
    return PotentialSpec(
        kind="double-well", p=4.0, c=1.0,
        core=core, core_d1=core_d1, core_d2=core_d2,
        perturbation=pert, perturbation_d1=pert_d1, perturbation_d2=pert_d2,
        domain_halfwidth=hw,
        perturbation_sup=DOUBLE_WELL_OSC,
        perturbation_d1_sup=DOUBLE_WELL_D1_SUP,
    )


def make_custom(core, core_d1, core_d2, p, c, halfwidth,
                perturbation=None, perturbation_d1=None, perturbation_d2=None):
    """Custom potential; the caller ships the decomposition, none is derived.

    The supplied core is validated against psi_c'' >= c*(1 + |x|**(p-2)) on a
    dense grid and the perturbation bounds are measured on the same grid.
    """
    pert = perturbation if perturbation is not None else _ZERO
    pert_d1 = perturbation_d1 if perturbation_d1 is not None else _ZERO
    spec = PotentialSpec(
        kind="custom-tabulated", p=float(p), c=float(c),
        core=core, core_d1=core_d1, core_d2=core_d2,
        perturbation=pert, perturbation_d1=pert_d1, perturbation_d2=perturbation_d2,
        domain_halfwidth=float(halfwidth),
        perturbation_sup=0.0, perturbation_d1_sup=0.0,
    )
    if spec.core_convexity_margin() < -1e-9:
        raise ValueError("core fails psi_c'' >= c*(1 + |x|**(p-2)) on the domain")
    xs = np.linspace(-spec.domain_halfwidth, spec.domain_halfwidth, 20001)
    sup = float(np.max(np.abs(pert(xs)))) * (1.0 + 1e-9)
    sup_d1 = float(np.max(np.abs(pert_d1(xs)))) * (1.0 + 1e-9)
    if not (np.isfinite(sup) and np.isfinite(sup_d1)):
        raise UnboundedPerturbationError("perturbation bounds are not finite")
    return replace(spec, perturbation_sup=sup, perturbation_d1_sup=sup_d1)
