"""Conservative Langevin (Kawasaki) dynamics on the periodic lattice.

The dynamics on R^N is

    dX_t = -A grad H(X_t) dt + sqrt(2 A) dB_t,
    H(x) = sum_i psi(x_i),  A_{i,j} = 2 delta_{i,j} - delta_{i,j+1} - delta_{i,j-1}

with periodic indices. A annihilates constants, so the sum of spins is
conserved and the dynamics restricts to the fixed-mean hyperplane by itself;
the integrator re-projects the mean each step purely as a float guard.

Discretization is fixed-step Euler-Maruyama,

    X <- X - h * A grad H(X) + sqrt(2 h) * S xi,    S = A^(1/2),

whose simplicity keeps the generator consistency check transparent. Decay
experiments measure W_p(law(X_t), equilibrium) against an equilibrium
reference batch produced by the independent pair-exchange sampler, fit
log W_p^p linearly in t above the finite-sample noise floor, and report the
fitted rate; empirical W_p between equal-size samples of the same law sits at
a positive bias floor, so points below 3x that floor are excluded from the
fit.
"""

import io
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BlowUpError, ShapeError
from .ensemble import SampleBatch
from .potential import TabulatedPotential

_INITIAL_LAWS = ("shifted-point", "hyperplane-gaussian", "equilibrium")


def discrete_laplacian(N):
    """Periodic discrete Laplacian: circulant with symbol 2 - 2cos(2 pi k / N)."""
    if N < 2:
        raise ShapeError("lattice needs N >= 2")
    A = np.zeros((N, N))
    idx = np.arange(N)
    A[idx, idx] = 2.0
    A[idx, (idx + 1) % N] -= 1.0
    A[idx, (idx - 1) % N] -= 1.0
    return A


def operator_sqrt(A, tol=1e-10):
    """Symmetric PSD square root via eigendecomposition; zero modes stay zero."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError("operator must be square")
    if not np.allclose(A, A.T, atol=1e-12):
        raise ShapeError("operator must be symmetric")
    vals, vecs = np.linalg.eigh(A)
    if np.any(vals < -1e-10):
        raise ShapeError("operator must be positive semidefinite")
    root = np.sqrt(np.clip(vals, 0.0, None))
    S = (vecs * root) @ vecs.T
    if np.max(np.abs(S @ S - A)) > tol:
        raise ShapeError("square-root reconstruction failed the tolerance")
    return S


@dataclass(frozen=True)
class KawasakiConfig:
    """Integrator configuration; h is capped at 0.1 / ||A|| (spectral bound 4)."""

    N: int
    h: float
    T: float
    n_paths: int
    initial_law: str = "equilibrium"
    seed: int = 0
    checkpoint_times: Optional[tuple] = None
    shift_scale: float = 1.0
    initial_spread: float = 0.5
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.N < 2:
            raise ShapeError("N >= 2 required")
        if not 0 < self.h <= 0.1 / 4.0 + 1e-15:
            raise ValueError("time step must satisfy h <= 0.1/||A|| = 0.025")
        if self.initial_law not in _INITIAL_LAWS:
            raise ValueError(f"unknown initial law {self.initial_law!r}")

    def checkpoints(self):
        if self.checkpoint_times is not None:
            ts = np.asarray(self.checkpoint_times, dtype=float)
            if np.any(np.diff(ts) <= 0):
                raise ValueError("checkpoint times must be strictly increasing")
            return ts
        return np.linspace(0.0, self.T, 11)[1:]


def _grad_fn(potential):
    if isinstance(potential, TabulatedPotential):
        lo, hi = potential.grid.lo, potential.grid.hi
        d1 = potential.spline_d1

        def grad(x):
            if np.any(x < lo) or np.any(x > hi):
                raise BlowUpError(
                    "trajectory left the tabulation range; reduce h or widen the grid")
            return d1(x)

        return grad
    return potential.d1


def initial_configurations(ensemble, config, rng, equilibrium_batch=None):
    """Starting paths on the mean-m hyperplane for the configured initial law."""
    N, m = config.N, ensemble.m
    if config.initial_law == "shifted-point":
        shift = np.resize([1.0, -1.0], N)
        shift -= shift.mean()
        x0 = m + config.shift_scale * shift
        return np.tile(x0, (config.n_paths, 1))
    if config.initial_law == "hyperplane-gaussian":
        z = rng.normal(0.0, config.initial_spread, size=(config.n_paths, N))
        z -= z.mean(axis=1, keepdims=True)
        return m + z
    if equilibrium_batch is None:
        raise ValueError("equilibrium initial law needs an equilibrium batch")
    data = equilibrium_batch.data
    if data.shape[0] < config.n_paths:
        raise ShapeError("equilibrium batch smaller than n_paths")
    return data[:config.n_paths].copy()


@dataclass
class SimulationResult:
    times: np.ndarray
    batches: list
    mean_drift_max: float
    config: KawasakiConfig


def simulate(ensemble, config, equilibrium_batch=None):
    """Euler-Maruyama trajectories, returning per-checkpoint sample batches.

    The pre-projection mean drift is tracked per step and its maximum
    reported; it stays at rounding level because drift and noise both live in
    the range of A, orthogonal to constants.
    """
    if ensemble.N != config.N:
        raise ShapeError("ensemble and config disagree on N")
    N, m = config.N, ensemble.m
    A = discrete_laplacian(N)
    S = operator_sqrt(2.0 * A)
    grad = _grad_fn(ensemble.potential)
    rng = np.random.default_rng(config.seed)
    X = initial_configurations(ensemble, config, rng, equilibrium_batch)
    X = X + (m - X.mean(axis=1, keepdims=True))
    h = config.h
    sqh = math.sqrt(h)
    times = config.checkpoints()
    steps = np.round(times / h).astype(int)
    if np.any(np.abs(steps * h - times) > 1e-9):
        steps = np.ceil(times / h - 1e-12).astype(int)
    batches = []
    drift_max = 0.0
    step = 0
    for target, t in zip(steps, times):
        while step < target:
            force = grad(X) @ A
            noise = rng.standard_normal(X.shape) @ S if config.noise_scale else 0.0
            X = X - h * force + config.noise_scale * sqh * noise
            off = float(np.max(np.abs(X.mean(axis=1) - m)))
            drift_max = max(drift_max, off)
            X += m - X.mean(axis=1, keepdims=True)
            if np.max(np.abs(X)) > 1e3:
                raise BlowUpError("trajectory blow-up (|x| > 1e3); reduce h")
            step += 1
        batches.append(SampleBatch(
            data=X.copy(), seed=config.seed, ess=float(X.shape[0]), thinning=1))
    return SimulationResult(times=times, batches=batches,
                            mean_drift_max=drift_max, config=config)


@dataclass(frozen=True)
class DecayTrace:
    """W_p decay measurements with the fitted exponential rate."""

    times: np.ndarray
    wp_values: np.ndarray
    wp_se: np.ndarray
    fitted_rate: float
    fit_r2: float
    initial_entropy: Optional[float]
    noise_floor_wpp: float
    p: float
    fit_window: tuple
    inconclusive: bool = False

    def to_csv(self):
        buf = io.StringIO()
        buf.write("t,wp,wp_se\n")
        for t, w, s in zip(self.times, self.wp_values, self.wp_se):
            buf.write(f"{t:.17g},{w:.17g},{s:.17g}\n")
        return buf.getvalue()

    def header_json(self, **extra):
        d = {
            "fitted_rate": self.fitted_rate,
            "fit_r2": self.fit_r2,
            "initial_entropy": self.initial_entropy,
            "noise_floor_wpp": self.noise_floor_wpp,
            "p": self.p,
            "inconclusive": self.inconclusive,
        }
        d.update(extra)
        return json.dumps(d)


def _wp_between(sa, sb, p, method):
    from . import transport
    if method == "quantile":
        return transport.wasserstein_1d(sa.ravel(), sb.ravel(), p)
    if method == "sinkhorn":
        c = np.abs(sa[:, None, :] - sb[None, :, :]) ** p
        eps = 1e-2 * float(np.median(c.sum(axis=2)))
        return transport.wasserstein_sinkhorn(sa, sb, p, epsilon=max(eps, 1e-6))
    return transport.wasserstein_matching(sa, sb, p)


def _subsample_se(sa, sb, p, method, rng, k=4):
    n = sa.shape[0]
    size = n // k
    if size < 8:
        return float("nan")
    vals = []
    for _ in range(k):
        ia = rng.permutation(n)[:size]
        ib = rng.permutation(n)[:size]
        vals.append(_wp_between(sa[ia], sb[ib], p, method).wpp)
    return float(np.std(vals, ddof=1) / math.sqrt(k))


def hyperplane_gaussian_entropy(ensemble, config):
    """Ent_mu(f0) for the hyperplane-Gaussian initial law under a Gaussian potential.

    Both laws are Gaussian on the (N-1)-dimensional tangent space: the
    equilibrium has identity covariance there, the initial law variance
    initial_spread**2 and the same center, so the relative entropy is
    (N-1)/2 * (s^2 - 1 - log s^2).
    """
    if getattr(ensemble.potential, "kind", None) != "gaussian":
        return None
    s2 = config.initial_spread**2
    return 0.5 * (config.N - 1) * (s2 - 1.0 - math.log(s2))


def decay_experiment(ensemble, config, p, reference_batch, transport_method="matching",
                     noise_floor_batch=None):
    """W_p(X_t, equilibrium) per checkpoint with an exponential-rate fit.

    ``reference_batch`` holds equilibrium samples (pair-exchange sampler) of
    at least n_paths configurations. The noise floor is the W_p^p between two
    disjoint halves of the reference (or against ``noise_floor_batch`` when
    given); the rate is the least-squares slope of log W_p^p over checkpoints
    above 3x that floor. Fewer than 3 usable checkpoints flags the trace
    inconclusive instead of fitting.
    """
    rng = np.random.default_rng(config.seed + 987654321)
    eq = reference_batch.data
    if eq.shape[0] < config.n_paths:
        raise ShapeError("reference batch smaller than n_paths")
    eq = eq[:config.n_paths]
    if noise_floor_batch is not None:
        floor = _wp_between(eq, noise_floor_batch.data[:config.n_paths], p,
                            transport_method).wpp
    else:
        half = config.n_paths // 2
        floor = _wp_between(eq[:half], eq[half:2 * half], p, transport_method).wpp
    sim = simulate(ensemble, config,
                   equilibrium_batch=reference_batch
                   if config.initial_law == "equilibrium" else None)
    wps = np.empty(len(sim.times))
    ses = np.empty(len(sim.times))
    for k, batch in enumerate(sim.batches):
        res = _wp_between(batch.data, eq, p, transport_method)
        wps[k] = res.value
        ses[k] = _subsample_se(batch.data, eq, p, transport_method, rng)
    wpp = wps**p
    usable = wpp > 3.0 * floor
    inconclusive = int(usable.sum()) < 3
    if not inconclusive:
        ts = sim.times[usable]
        ys = np.log(wpp[usable])
        coef = np.polyfit(ts, ys, 1)
        pred = np.polyval(coef, ts)
        ss_res = float(np.sum((ys - pred) ** 2))
        ss_tot = float(np.sum((ys - ys.mean()) ** 2))
        rate = float(coef[0])
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
        window = (float(ts[0]), float(ts[-1]))
    else:
        rate = float("nan")
        r2 = float("nan")
        window = (float("nan"), float("nan"))
    return DecayTrace(
        times=sim.times, wp_values=wps, wp_se=ses, fitted_rate=rate, fit_r2=r2,
        initial_entropy=hyperplane_gaussian_entropy(ensemble, config)
        if config.initial_law == "hyperplane-gaussian" else None,
        noise_floor_wpp=float(floor), p=float(p), fit_window=window,
        inconclusive=bool(inconclusive),
    )
