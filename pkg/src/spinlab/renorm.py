"""Coarse-graining renormalization of single-site potentials.

The one-step renormalized potential is

    R psi(y) = -1/2 * log int exp(-psi(x + y) - psi(-x + y)) dx .

Iterating the block structure keeps one bookkeeping subtlety: after M
coarse-grainings the block-mean distribution has density proportional to
exp(-2**M * V_M(z)), so the next level renormalizes the site-weighted
potential and rescales,

    V_{k+1} = 2**(-k) * R(2**k * V_k),   V_0 = psi .

With this convention V_M coincides (up to an additive constant) with the
direct K-site coarse-grained potential

    psi_K(m) = -(1/K) * log int_{mean(x)=m} exp(-sum_i psi(x_i)) dx,  K = 2**M,

which ``coarse_grained_direct`` computes independently for K in {2, 4} by
slice quadrature. All tabulated outputs are normalized to min = 0 with the
subtracted offset recorded; the defining integrals only fix potentials up to
the partition-function constant, and letting the constant drift destroys
floating-point range over iterations.

``certify_p_convexity`` certifies convexity constants from sampled secant
inequalities

    V(t*x + (1-t)*y) <= t*V(x) + (1-t)*V(y) - rho * t*(1-t)/p * |x - y|**p,

reporting the largest rho consistent with every sampled witness; the
pointwise criterion V''(x) >= c*(p-1)*|x|**(p-2) is evaluated alongside as an
advisory (it is sufficient but not necessary: (x-1)**4 is 4-convex although
12*(x-1)**2 < 12*x**2 near x = 1).
"""

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .errors import InsufficientGridError, QuadratureError
from .potential import PotentialSpec, TabulatedPotential
from .quadrature import QuadratureSpec, gauss_legendre_nodes, locate_max, log_integral_exp


@dataclass(frozen=True)
class CertificationReport:
    """Convexity constants certified from sampled witnesses.

    ``rho_p`` and ``c_uniform`` are minima over the tested witnesses, hence
    never exceed the true constants on the tested grid.
    """

    rho_p: float
    c_uniform: float
    n_triples: int
    worst_witness: tuple
    method: str
    advisory: Optional["CertificationReport"] = None

    def to_json(self):
        d = {
            "rho_p": self.rho_p,
            "c_uniform": self.c_uniform,
            "n_triples": self.n_triples,
            "worst_witness": list(self.worst_witness),
            "method": self.method,
        }
        if self.advisory is not None:
            d["advisory"] = json.loads(self.advisory.to_json())
        return json.dumps(d)


def _raw_value_fn(potential):
    """Vectorized potential values plus the admissible symmetric x-radius at y."""
    if isinstance(potential, PotentialSpec):
        def radius(y):
            return potential.domain_halfwidth + abs(y) + 2.0
        return potential.value, radius
    if isinstance(potential, TabulatedPotential):
        g = potential.grid
        def radius(y):
            return min(g.hi - y, y - g.lo)
        return potential.value, radius
    raise TypeError(f"unsupported potential type {type(potential)!r}")


def renormalize(potential, grid, quad=None):
    """One renormalization step, tabulated on ``grid``.

    For each node y the integrand maximum is located first (the integrand is
    even in x) and the quadrature runs on the log-shifted ratio, so no
    underflow management is left to the caller.
    """
    if quad is None:
        quad = QuadratureSpec()
    value, radius = _raw_value_fn(potential)
    ys = grid.nodes()
    raw = np.empty_like(ys)
    for k, y in enumerate(ys):
        r = radius(y)
        if not r > 0:
            raise QuadratureError(
                f"no integration room at y={y}; widen the input domain", at=y)

        def w(x, y=y):
            x = np.asarray(x, dtype=float)
            return -(value(x + y) + value(y - x))

        try:
            # even integrand: integrate [0, r] and double
            peak = locate_max(w, 0.0, r)
            log_i = log_integral_exp(w, 0.0, r, quad, peak=peak) + np.log(2.0)
        except QuadratureError as exc:
            raise QuadratureError(f"renormalization failed at y={y}: {exc}", at=y)
        raw[k] = -0.5 * log_i
    offset = float(np.min(raw))
    p = potential.p
    c = getattr(potential, "c", None)
    it = getattr(potential, "iteration_count", 0) + 1
    return TabulatedPotential(
        grid=grid, values=raw - offset, p=p, c=c,
        iteration_count=it, normalization_offset=offset,
    )


def iterate_renormalize(potential, m_iterations, grid, quad=None, shrink_margin=0.5):
    """The sequence [R psi, R^2 psi, ..., R^M psi] on progressively shrunk grids.

    Level k renormalizes the site-weighted potential 2**k * V_k and rescales
    by 2**(-k), so each iterate matches the direct 2**(k+1)-site
    coarse-grained potential up to an additive constant.
    """
    if m_iterations < 1:
        raise ValueError("M must be >= 1")
    if quad is None:
        quad = QuadratureSpec()
    out = []
    current = potential
    g = grid
    for k in range(m_iterations):
        if k > 0:
            try:
                g = g.shrink(shrink_margin)
            except ValueError:
                raise InsufficientGridError(
                    f"grid exhausted at iteration {k + 1}: margin leaves no nodes")
            if g.n < 32:
                raise InsufficientGridError(
                    f"grid exhausted at iteration {k + 1}: {g.n} interior nodes left")
        scale = float(2**k)
        source = current if k == 0 else current.scaled(scale)
        nxt = renormalize(source, g, quad)
        if k > 0:
            nxt = nxt.scaled(1.0 / scale)
        nxt.iteration_count = k + 1
        out.append(nxt)
        current = nxt
    return out


def coarse_grained_direct(potential, K, m_grid, quad=None, n_gl=80):
    """Direct K-site coarse-grained potential on ``m_grid`` for K in {2, 4}.

    K = 2 parametrizes the constraint slice as x = (m + u, m - u) and reduces
    to the same 1D integral as one renormalization step. K = 4 integrates
    over (x1, x2, x3) with x4 = 4m - x1 - x2 - x3 on a tensor Gauss-Legendre
    box covering the sublevel set of psi, with a global log shift.
    Slice-measure constants are absorbed by the min-0 normalization.
    """
    if K not in (2, 4):
        raise ValueError("direct coarse-graining supports K in {2, 4} only")
    if quad is None:
        quad = QuadratureSpec()
    if not isinstance(potential, PotentialSpec):
        raise TypeError("direct coarse-graining needs an analytic potential")
    value = potential.value
    # per-dimension box: sublevel set {psi - min psi <= 46} padded
    hw = potential.domain_halfwidth
    scan = np.linspace(-3.0 * hw, 3.0 * hw, 4001)
    vals = value(scan)
    vmin = float(np.min(vals))
    inside = scan[vals - vmin <= 46.0]
    lo, hi = float(inside[0]) - 0.25, float(inside[-1]) + 0.25
    if K == 2:
        return _coarse_grained_two(potential, m_grid, lo, hi, max(2 * n_gl, 256))
    x, w = gauss_legendre_nodes(n_gl, lo, hi)
    psi_x = value(x)
    logw = np.log(w)
    # precomputed 1D pieces; the x4 term is the only full 3D evaluation
    a1 = (-psi_x + logw)[:, None, None]
    a2 = (-psi_x + logw)[None, :, None]
    a3 = (-psi_x + logw)[None, None, :]
    s3 = x[:, None, None] + x[None, :, None] + x[None, None, :]

    ms = m_grid.nodes()
    raw = np.empty_like(ms)
    for i, m in enumerate(ms):
        x4 = 4.0 * m - s3
        log_term = a1 + a2 + a3 - value(x4)
        shift = float(np.max(log_term))
        total = float(np.sum(np.exp(log_term - shift)))
        if not total > 0:
            raise QuadratureError(f"empty integrand for K=4 at m={m}", at=m)
        raw[i] = -0.25 * (shift + np.log(total))
    offset = float(np.min(raw))
    return TabulatedPotential(
        grid=m_grid, values=raw - offset, p=potential.p, c=potential.c,
        iteration_count=2, normalization_offset=offset,
    )


def _coarse_grained_two(potential, m_grid, lo, hi, n_gl):
    """K=2 slice quadrature: x = (m + u, m - u), Gauss-Legendre in u.

    Deliberately a different quadrature family from ``renormalize`` so the two
    routes cross-check each other; the slice-measure constant is normalized
    away.
    """
    value = potential.value
    # u-range covering both factors' sublevel boxes for every m in the grid
    r = 0.5 * (hi - lo) + max(abs(m_grid.lo), abs(m_grid.hi)) + 0.5
    u, w = gauss_legendre_nodes(n_gl, -r, r)
    logw = np.log(w)
    ms = m_grid.nodes()
    raw = np.empty_like(ms)
    for i, m in enumerate(ms):
        log_term = -(value(m + u) + value(m - u)) + logw
        shift = float(np.max(log_term))
        total = float(np.sum(np.exp(log_term - shift)))
        if not total > 0:
            raise QuadratureError(f"empty integrand for K=2 at m={m}", at=m)
        raw[i] = -0.5 * (shift + np.log(total))
    offset = float(np.min(raw))
    return TabulatedPotential(
        grid=m_grid, values=raw - offset, p=potential.p, c=potential.c,
        iteration_count=1, normalization_offset=offset,
    )


def secant_defect(tab, x, y, t, p):
    """p * [t*V(x) + (1-t)*V(y) - V(t*x+(1-t)*y)] / (t*(1-t)*|x-y|**p)."""
    s = tab.spline
    num = t * s(x) + (1.0 - t) * s(y) - s(t * x + (1.0 - t) * y)
    return float(p) * num / (t * (1.0 - t) * np.abs(x - y) ** p)


def _second_derivative_report(tab, p):
    nodes = tab.grid.nodes()
    h = tab.grid.step
    v = tab.values
    dd = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
    xs = nodes[1:-1]
    denom = (p - 1.0) * np.abs(xs) ** (p - 2.0)
    usable = denom > 1e-9
    ratios = dd[usable] / denom[usable]
    if ratios.size == 0:
        raise InsufficientGridError("no usable interior node for the derivative criterion")
    c_p = float(np.min(ratios))
    # nodes with vanishing weight |x|**(p-2) still must not be concave
    if np.any(dd[~usable] < -1e-9 * max(1.0, float(np.max(np.abs(v))))):
        c_p = min(c_p, 0.0)
    k = int(np.argmin(np.where(usable, dd / np.maximum(denom, 1e-9), np.inf)))
    c_unif = float(np.min(dd))
    return CertificationReport(
        rho_p=max(c_p, 0.0),
        c_uniform=max(c_unif, 0.0),
        n_triples=int(xs.size),
        worst_witness=(float(xs[k]), float(xs[k]), 0.0),
        method="second-derivative",
    )


def certify_p_convexity(tab, p, n_triples=4096, rng_seed=0):
    """Secant-inequality certification with an advisory derivative criterion.

    Witnesses (x, y, t) are drawn from a scrambled Sobol sequence over
    (node, node, t in [0.1, 0.9]); deterministic given ``rng_seed``. Reported
    constants are clamped at 0.
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    if tab.grid.n < 64:
        raise InsufficientGridError("certification needs at least 64 nodes")
    nodes = tab.grid.nodes()

    n_pow2 = 1 << int(np.ceil(np.log2(max(int(n_triples), 4))))
    sob = qmc.Sobol(d=3, scramble=True, seed=int(rng_seed)).random(n_pow2)[:n_triples]
    i = np.minimum((sob[:, 0] * len(nodes)).astype(int), len(nodes) - 1)
    j = np.minimum((sob[:, 1] * len(nodes)).astype(int), len(nodes) - 1)
    t = 0.1 + 0.8 * sob[:, 2]
    keep = i != j
    i, j, t = i[keep], j[keep], t[keep]
    if i.size == 0:
        raise InsufficientGridError("all sampled witnesses degenerate")
    x, y = nodes[i], nodes[j]
    vx, vy = tab.values[i], tab.values[j]
    vz = tab.spline(t * x + (1.0 - t) * y)
    num = t * vx + (1.0 - t) * vy - vz
    base = t * (1.0 - t) * np.abs(x - y)
    defects_p = p * num / (base * np.abs(x - y) ** (p - 1.0))
    defects_2 = 2.0 * num / (base * np.abs(x - y))
    kp = int(np.argmin(defects_p))
    return CertificationReport(
        rho_p=max(float(defects_p[kp]), 0.0),
        c_uniform=max(float(np.min(defects_2)), 0.0),
        n_triples=int(i.size),
        worst_witness=(float(x[kp]), float(y[kp]), float(t[kp])),
        method="secant-inequality",
        advisory=_second_derivative_report(tab, p),
    )


def mass_window(tab, drop=25.0, min_nodes=64):
    """Restriction of a tabulated potential to {V - min V <= drop}.

    Outer nodes of an iterated renormalization carry only underflow-level
    weight downstream but are individually less accurate; certification and
    curvature comparisons should run on this trusted window.
    """
    v = tab.values - float(np.min(tab.values))
    inside = np.nonzero(v <= drop)[0]
    lo_i, hi_i = int(inside[0]), int(inside[-1])
    while hi_i - lo_i + 1 < min_nodes and (lo_i > 0 or hi_i < tab.grid.n - 1):
        lo_i = max(lo_i - 1, 0)
        hi_i = min(hi_i + 1, tab.grid.n - 1)
    nodes = tab.grid.nodes()
    return tab.restricted(float(nodes[lo_i]), float(nodes[hi_i]))


def fit_convex_core(tab, p):
    """Least-squares fit a + b*y**2 + d*|y|**p to the tabulated values.

    Returns (coeffs, residuals). Used to exhibit the decomposition of a
    renormalized potential into a p-convex core plus a bounded remainder.
    """
    ys = tab.grid.nodes()
    design = np.column_stack([np.ones_like(ys), ys**2, np.abs(ys) ** p])
    coef, *_ = np.linalg.lstsq(design, tab.values, rcond=None)
    resid = tab.values - design @ coef
    return coef, resid
