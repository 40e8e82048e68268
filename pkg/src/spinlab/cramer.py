"""Legendre analysis of the single-site measure: tilts, rate function, growth.

phi_star(sigma) = log int exp(sigma*x - psi(x)) dx is the log moment
generating function; its Legendre transform

    phi(m) = sup_sigma ( sigma*m - phi_star(sigma) )

is realized by the exponential tilt mu^sigma(dx) propto exp(sigma*x - psi(x)) dx
at the unique sigma with mean(mu^sigma) = m, and

    phi''(m)  = 1 / var(mu^sigma_m),
    phi'''(m) = - mu_3(mu^sigma_m) / var(mu^sigma_m)**3 .

``cramer_deficit`` compares the curvature of the K-site coarse-grained
potential against phi'' (the K -> infinity limit), and ``check_p_growth``
extracts the largest pointwise constants in

    phi(m) - phi(m0) >= (c/p) |m - m0|**p,
    |phi'(m)|        >= c' |m - m0|**(p-1),
    phi''(m)         >= C  |m - m0|**(p-2),

with m0 the mean of the untilted measure. Growth constants come from exact
per-grid-point minimization of the ratio, not regression: the inequalities
are pointwise statements.
"""

import io
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientGridError, SolverError
from .potential import GridSpec, PotentialSpec
from .quadrature import (QuadratureSpec, locate_max, log_integral_exp,
                         weighted_moments)
from .renorm import iterate_renormalize


@dataclass(frozen=True)
class TiltedMeasure:
    """mu^sigma(dx) = exp(sigma*x - psi(x) - phi_star(sigma)) dx with its moments."""

    potential: PotentialSpec
    sigma: float
    log_norm: float
    mean: float
    variance: float
    third_central_moment: float

    def validate(self, quad=None, h=1e-5, tol=1e-8):
        """Cross-check mean == d/dsigma phi_star(sigma) by finite differences."""
        up = log_mgf(self.potential, self.sigma + h, quad)
        dn = log_mgf(self.potential, self.sigma - h, quad)
        return abs((up - dn) / (2 * h) - self.mean) <= tol * max(1.0, abs(self.mean))


def _tilt_window(potential, sigma):
    """Integration window for exp(sigma*x - psi(x)), re-centered at the mode.

    For large |sigma| the mass leaves any fixed window, so the domain is
    grown outward from the tilted mode until the log-integrand has dropped by
    80 (clearing bounded-perturbation wiggles on top of the underflow margin).
    """
    def w(x):
        return sigma * np.asarray(x, dtype=float) - potential.value(x)

    hw = potential.domain_halfwidth
    scan_r = hw + abs(sigma) ** (1.0 / max(potential.p - 1.0, 1.0)) + abs(sigma) + 2.0
    center = locate_max(w, -scan_r, scan_r, n_scan=2049)
    top = float(w(np.asarray(center)))
    drop = 80.0 + 2.0 * potential.perturbation_sup
    r = max(1.0, hw / 4.0)
    while float(w(np.asarray(center + r))) > top - drop or \
            float(w(np.asarray(center - r))) > top - drop:
        r *= 1.5
        if r > 1e7:
            raise SolverError("tilted integrand fails to decay; invalid potential?")
    return w, center - r, center + r, center


def log_mgf(potential, sigma, quad=None):
    """phi_star(sigma) = log int exp(sigma*x - psi(x)) dx by shifted quadrature."""
    if quad is None:
        quad = QuadratureSpec()
    w, lo, hi, center = _tilt_window(potential, sigma)
    return log_integral_exp(w, lo, hi, quad, peak=center)


def tilted_moments(potential, sigma, quad=None):
    """TiltedMeasure at a given sigma (normalizer, mean, variance, mu_3)."""
    if quad is None:
        quad = QuadratureSpec()
    w, lo, hi, center = _tilt_window(potential, sigma)
    log_z, m = weighted_moments(w, lo, hi, orders=(1, 2, 3), quad=quad, peak=center)
    mean = m[1]
    var = m[2] - mean**2
    mu3 = m[3] - 3.0 * mean * m[2] + 2.0 * mean**3
    return TiltedMeasure(
        potential=potential, sigma=float(sigma), log_norm=float(log_z),
        mean=float(mean), variance=float(var), third_central_moment=float(mu3),
    )


def tilt_solve(potential, m, quad=None, tol=1e-10, max_iter=100):
    """The tilt with prescribed mean: Newton on mean(sigma) - m, slope var > 0.

    Falls back to bisection on a geometrically grown sigma bracket when
    Newton leaves the stable region or stalls.
    """
    if not np.isfinite(m):
        raise ValueError("target mean must be finite")
    sigma = 0.0
    last = None
    for _ in range(max_iter):
        tm = tilted_moments(potential, sigma, quad)
        g = tm.mean - m
        if abs(g) <= tol:
            return tm
        if tm.variance <= 0:
            break
        step = g / tm.variance
        sigma -= step
        if not np.isfinite(sigma) or abs(sigma) > 1e8:
            break
        last = tm
    # bracketing fallback: mean(sigma) is strictly increasing
    lo, hi = -1.0, 1.0
    for _ in range(200):
        if tilted_moments(potential, lo, quad).mean < m:
            break
        lo *= 2.0
    for _ in range(200):
        if tilted_moments(potential, hi, quad).mean > m:
            break
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        tm = tilted_moments(potential, mid, quad)
        if abs(tm.mean - m) <= tol:
            return tm
        if tm.mean < m:
            lo = mid
        else:
            hi = mid
    raise SolverError(
        f"tilt solver did not reach |mean - m| <= {tol} at m={m}"
        + (f" (last Newton mean {last.mean})" if last else "")
    )


def phi(potential, m, quad=None):
    """phi(m) = sigma_m * m - phi_star(sigma_m)."""
    tm = tilt_solve(potential, m, quad)
    return tm.sigma * m - tm.log_norm


def phi_dd(potential, m, quad=None):
    """phi''(m) = 1 / var(mu^sigma_m)."""
    tm = tilt_solve(potential, m, quad)
    return 1.0 / tm.variance


def phi_d3(potential, m, quad=None):
    """phi'''(m) = -mu_3 / var**3 at the tilt realizing mean m."""
    tm = tilt_solve(potential, m, quad)
    return -tm.third_central_moment / tm.variance**3


@dataclass(frozen=True)
class DeficitTable:
    """Relative curvature deficit |psi_K'' - phi''| / phi'' per grid mean."""

    K: int
    m: np.ndarray
    phi: np.ndarray
    phi_dd: np.ndarray
    psi_K_dd: np.ndarray
    deficit: np.ndarray

    @property
    def max_deficit(self):
        return float(np.max(self.deficit))

    def to_csv(self):
        buf = io.StringIO()
        buf.write("m,phi,phi_dd,psi_K_dd,deficit\n")
        for row in zip(self.m, self.phi, self.phi_dd, self.psi_K_dd, self.deficit):
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return buf.getvalue()


def cramer_deficit(potential, K, m_grid, quad=None, psi_K=None, tab_grid=None):
    """Per-m table of |psi_K''(m) - phi''(m)| / phi''(m).

    ``psi_K`` may be supplied directly (e.g. from ``coarse_grained_direct``);
    otherwise it is built by iterated renormalization, which requires K to be
    a power of two. Grid-boundary second differences are excluded.
    """
    if quad is None:
        quad = QuadratureSpec()
    if psi_K is None:
        m_count = int(round(np.log2(K)))
        if 2**m_count != K or K < 2:
            raise ValueError("K must be a power of two when psi_K is not supplied")
        if tab_grid is None:
            hw = max(2.0 * potential.domain_halfwidth, abs(m_grid.lo) + 8.0,
                     abs(m_grid.hi) + 8.0, 12.0)
            tab_grid = GridSpec(-hw, hw, int(round(2 * hw / 0.02)) + 1)
        psi_K = iterate_renormalize(potential, m_count, tab_grid, quad)[-1]

    h = psi_K.grid.step
    ms_all = m_grid.nodes()
    ok = (ms_all >= psi_K.grid.lo + h) & (ms_all <= psi_K.grid.hi - h)
    ms = ms_all[ok]
    if ms.size < 8:
        raise InsufficientGridError(
            "fewer than 8 interior points remain after boundary exclusion")
    phis = np.empty_like(ms)
    phi_dds = np.empty_like(ms)
    for i, m in enumerate(ms):
        tm = tilt_solve(potential, m, quad)
        phis[i] = tm.sigma * m - tm.log_norm
        phi_dds[i] = 1.0 / tm.variance
    psi_k_dd = np.asarray(psi_K.d2(ms), dtype=float)
    deficit = np.abs(psi_k_dd - phi_dds) / phi_dds
    return DeficitTable(K=int(K), m=ms, phi=phis, phi_dd=phi_dds,
                        psi_K_dd=psi_k_dd, deficit=deficit)


@dataclass(frozen=True)
class PGrowthReport:
    """Largest pointwise growth constants of phi around its minimum m0."""

    p: float
    m0: float
    c_phi_growth: float
    c_phid_growth: float
    c_phidd_growth: float
    passed: bool
    m: np.ndarray
    phi: np.ndarray
    phi_d: np.ndarray
    phi_dd: np.ndarray

    def to_csv(self):
        buf = io.StringIO()
        buf.write("m,phi,phi_dd,psi_K_dd,deficit\n")
        for m, ph, pdd in zip(self.m, self.phi, self.phi_dd):
            buf.write(f"{m:.17g},{ph:.17g},{pdd:.17g},,\n")
        return buf.getvalue()


def check_p_growth(potential, p, m_grid, quad=None):
    """Fit the largest constants in the p-growth inequalities of phi.

    Conventions: the value inequality is normalized as
    phi(m) - phi(m0) >= (c/p)*|m - m0|**p, so a standard Gaussian at p = 2
    reports c = C = 1 (phi'' = 1). Points within half a grid step of m0 are
    excluded (exact equality 0 >= 0 there).
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    if quad is None:
        quad = QuadratureSpec()
    m0 = tilted_moments(potential, 0.0, quad).mean
    phi0 = phi(potential, m0, quad)
    ms = m_grid.nodes()
    phis = np.empty_like(ms)
    phi_ds = np.empty_like(ms)
    phi_dds = np.empty_like(ms)
    for i, m in enumerate(ms):
        tm = tilt_solve(potential, m, quad)
        phis[i] = tm.sigma * m - tm.log_norm
        phi_ds[i] = tm.sigma
        phi_dds[i] = 1.0 / tm.variance
    delta = np.abs(ms - m0)
    away = delta > 0.5 * m_grid.step
    if not np.any(away):
        raise InsufficientGridError("all grid points coincide with m0")
    c_val = float(np.min((phis[away] - phi0) / (delta[away] ** p / p)))
    c_d = float(np.min(np.abs(phi_ds[away]) / delta[away] ** (p - 1.0)))
    c_dd = float(np.min(phi_dds / np.maximum(delta ** (p - 2.0), 1e-300))) if p > 2 \
        else float(np.min(phi_dds))
    return PGrowthReport(
        p=float(p), m0=float(m0),
        c_phi_growth=c_val, c_phid_growth=c_d, c_phidd_growth=c_dd,
        passed=bool(c_val > 0 and c_dd > 0),
        m=ms, phi=phis, phi_d=phi_ds, phi_dd=phi_dds,
    )
