"""Log-stabilized 1D quadrature used by the renormalization and tilt modules.

All integrals here have the form ``log int exp(w(x)) dx`` with w sharply
peaked. The integrand is always shifted by its maximum before exponentiating,
so only ratios exp(w - w_max) <= 1 are ever formed.
"""

from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .errors import QuadratureError

_VALID_RULES = ("simpson", "gauss-kronrod")


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature policy: rule tag, relative tolerance, subdivision cap."""

    rule: str = "simpson"
    rel_tol: float = 1e-10
    max_subdivisions: int = 65536
    logsumexp_shift: bool = True

    def __post_init__(self):
        if self.rule not in _VALID_RULES:
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_subdivisions < 64:
            raise ValueError("max_subdivisions must be at least 64")
        if not self.logsumexp_shift:
            raise ValueError("logsumexp_shift is mandatory for this laboratory")


def locate_max(w, lo, hi, n_scan=513):
    """Argmax of a scalar-or-vectorized callable on [lo, hi].

    Coarse grid scan followed by a bounded golden/Brent refinement around the
    best node. Robust to multimodal w; returns the global grid winner refined
    locally.
    """
    xs = np.linspace(lo, hi, n_scan)
    vals = np.asarray(w(xs), dtype=float)
    k = int(np.argmax(vals))
    a = xs[max(k - 1, 0)]
    b = xs[min(k + 1, n_scan - 1)]
    if a == b:
        return xs[k]
    res = optimize.minimize_scalar(
        lambda x: -float(w(x)), bounds=(a, b), method="bounded",
        options={"xatol": 1e-12},
    )
    x_star = float(res.x)
    if float(w(x_star)) >= vals[k]:
        return x_star
    return float(xs[k])


def _simpson(fx, h):
    return h / 3.0 * (fx[0] + fx[-1] + 4.0 * fx[1:-1:2].sum() + 2.0 * fx[2:-2:2].sum())


def _simpson_doubling(f, lo, hi, quad):
    n = 64
    xs = np.linspace(lo, hi, n + 1)
    prev = _simpson(f(xs), (hi - lo) / n)
    while n <= quad.max_subdivisions:
        n *= 2
        xs = np.linspace(lo, hi, n + 1)
        cur = _simpson(f(xs), (hi - lo) / n)
        if abs(cur - prev) <= quad.rel_tol * abs(cur) + 1e-300:
            return cur
        prev = cur
    raise QuadratureError(
        f"composite Simpson did not converge below rel_tol={quad.rel_tol} "
        f"within {quad.max_subdivisions} panels on [{lo}, {hi}]"
    )


def log_integral_exp(w, lo, hi, quad=None, peak=None):
    """log of int_lo^hi exp(w(x)) dx, shift-stabilized.

    ``w`` must accept numpy arrays. ``peak``, when given, is used as the shift
    location instead of searching for the maximum.
    """
    if quad is None:
        quad = QuadratureSpec()
    if not hi > lo:
        raise QuadratureError(f"empty integration interval [{lo}, {hi}]")
    if peak is None:
        peak = locate_max(w, lo, hi)
    shift = float(w(np.asarray(peak)))

    def f(x):
        return np.exp(np.asarray(w(x), dtype=float) - shift)

    if quad.rule == "gauss-kronrod":
        points = [peak] if lo < peak < hi else None
        val, _ = integrate.quad(
            lambda x: float(f(x)), lo, hi,
            epsabs=0.0, epsrel=quad.rel_tol, limit=max(quad.max_subdivisions, 64),
            points=points,
        )
    else:
        val = _simpson_doubling(f, lo, hi, quad)
    if not val > 0 or not np.isfinite(val):
        raise QuadratureError(f"non-positive integral value {val} on [{lo}, {hi}]")
    return shift + float(np.log(val))


def weighted_moments(w, lo, hi, orders, quad=None, peak=None):
    """Moments int x^k exp(w) dx / int exp(w) dx for k in ``orders``.

    All moments and the normalizer are computed on the same doubling grids and
    the iteration stops when every requested quantity is stable to rel_tol.
    Returns (log_normalizer, {k: moment}).
    """
    if quad is None:
        quad = QuadratureSpec()
    if peak is None:
        peak = locate_max(w, lo, hi)
    shift = float(w(np.asarray(peak)))

    def batch(n):
        xs = np.linspace(lo, hi, n + 1)
        dens = np.exp(np.asarray(w(xs), dtype=float) - shift)
        h = (hi - lo) / n
        z = _simpson(dens, h)
        mom = {k: _simpson(dens * xs**k, h) / z for k in orders}
        return z, mom

    n = 256
    z_prev, m_prev = batch(n)
    while n <= quad.max_subdivisions:
        n *= 2
        z, m = batch(n)
        scale = max(abs(z), 1e-300)
        ok = abs(z - z_prev) <= quad.rel_tol * scale
        for k in orders:
            ref = max(abs(m[k]), 1.0)
            ok = ok and abs(m[k] - m_prev[k]) <= quad.rel_tol * ref
        if ok:
            return shift + float(np.log(z)), m
        z_prev, m_prev = z, m
    raise QuadratureError(
        f"moment quadrature did not stabilize within {quad.max_subdivisions} panels"
    )


def gauss_legendre_nodes(n, lo, hi):
    """Gauss-Legendre nodes and weights mapped to [lo, hi]."""
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w
