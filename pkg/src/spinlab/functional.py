"""Entropy functionals, modified log-Sobolev machinery, and inequality checks.

Conventions. For a probability measure mu and positive f,

    Ent_mu(f) = int f log f dmu - (int f dmu) log int f dmu .

A measure satisfies the p-modified log-Sobolev inequality with constant rho
(q dual to p, 1/p + 1/q = 1) when

    Ent_mu(f) <= (1/rho) int ||grad f||_q^q / f^(q-1) dmu

for all positive smooth f; larger rho is a stronger statement. The
equivalent form Ent_mu(f^q) <= (q^q/rho) int ||grad f||_q^q dmu is the same
statement under f -> f^(1/q) (checked as an algebraic identity in the test
suite). Derived constants:

* curvature criterion: a uniformly p-convex potential with constant rho
  yields the inequality with constant (rho/q)**(q-1);
* tensorization: product measures inherit min(rho_1, rho_2);
* bounded perturbation: reweighting by a bounded exp(psi) rescales the
  constant by exp(-2*osc(psi)) in the conservative (weakening) direction.
  The opposite factor exp(+2*osc) that sometimes appears in the literature
  is inconsistent with the convention that larger rho is stronger (a bounded
  perturbation cannot improve the inequality), so reports record both values
  and the returned constant is the conservative one.

``estimate_best_rho`` lower-bounds nothing: it reports the infimum of
energy/entropy over a finite test family, which is an UPPER bound for the
optimal constant, always tagged with the family that produced it.

The Laplace-transform (Herbst) bound for 1-Lipschitz, mean-zero f under
p-LSI(rho): int exp(lambda f) dmu <= exp(lambda**q / (rho*(q-1))), and the
p-exponential concentration bound mu(f >= mean + r) <= exp(-c r**p /
(p*(p-1)**(p-1))) are checked against empirical/discretized left sides.
"""

import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, EmptyFamilyError, LipschitzError, PartitionError
from .ensemble import SampleBatch


def dual_exponent(p):
    """q with 1/p + 1/q = 1; asserts the duality bookkeeping to 1e-14."""
    if p < 2:
        raise ValueError("p must be >= 2")
    if p == float("inf"):
        return 1.0
    q = p / (p - 1.0)
    assert abs(1.0 / p + 1.0 / q - 1.0) <= 1e-14
    return q


@dataclass(frozen=True)
class DiscretizedMeasure:
    """Finite measure: support points (n,) or (n, d) with unit-sum weights."""

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "support", np.asarray(self.support, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        if len(self.weights) != self.points().shape[0]:
            raise ValueError("support/weights length mismatch")

    def points(self):
        s = self.support
        return s[:, None] if s.ndim == 1 else s

    @property
    def dim(self):
        return self.points().shape[1]

    @staticmethod
    def from_log_density(nodes, log_density):
        """1D measure with weights proportional to exp(log_density) at nodes."""
        nodes = np.asarray(nodes, dtype=float)
        w = np.exp(np.asarray(log_density, dtype=float) - np.max(log_density))
        w = w / w.sum()
        return DiscretizedMeasure(support=nodes, weights=w)


def gaussian_1d(lo=-8.0, hi=8.0, step=1e-3):
    """Discretized standard Gaussian on a uniform grid."""
    n = int(round((hi - lo) / step)) + 1
    xs = np.linspace(lo, hi, n)
    return DiscretizedMeasure.from_log_density(xs, -0.5 * xs**2)


def _weights_points(measure):
    if isinstance(measure, DiscretizedMeasure):
        return measure.weights, measure.points()
    if isinstance(measure, SampleBatch):
        n = measure.n_samples
        return np.full(n, 1.0 / n), measure.data
    raise TypeError(f"unsupported measure type {type(measure)!r}")


def entropy(f_values, measure, return_se=False):
    """Ent(f) = sum w f log f - (sum w f) log(sum w f); f must be positive.

    For a SampleBatch the empirical-average version is used; with
    ``return_se`` a delete-one jackknife standard error is attached.
    """
    w, _ = _weights_points(measure)
    f = np.asarray(f_values, dtype=float)
    if np.any(f <= 0):
        raise DomainError("entropy requires strictly positive f")
    s1 = float(np.sum(w * f * np.log(f)))
    s0 = float(np.sum(w * f))
    ent = s1 - s0 * math.log(s0)
    if not return_se:
        return ent
    if not isinstance(measure, SampleBatch):
        return ent, 0.0
    n = f.size
    if n < 3:
        return ent, float("nan")
    flf = f * np.log(f)
    loo1 = (flf.sum() - flf) / (n - 1)
    loo0 = (f.sum() - f) / (n - 1)
    theta = loo1 - loo0 * np.log(loo0)
    se = math.sqrt((n - 1) / n * float(np.sum((theta - theta.mean()) ** 2)))
    return ent, se


def mlsi_energy(f_values, grad_values, measure, q):
    """int ||grad f||_q^q / f^(q-1) dmu as a discrete sum / empirical average."""
    if not 1.0 < q <= 2.0:
        raise ValueError("q must lie in (1, 2] (dual of p >= 2)")
    w, pts = _weights_points(measure)
    f = np.asarray(f_values, dtype=float)
    if np.any(f <= 0):
        raise DomainError("energy requires strictly positive f")
    g = np.asarray(grad_values, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape != pts.shape:
        raise ValueError(f"gradient shape {g.shape} does not match support {pts.shape}")
    return float(np.sum(w * np.sum(np.abs(g) ** q, axis=1) / f ** (q - 1.0)))


@dataclass(frozen=True)
class TestFunction:
    """Positive test function with gradient, evaluated on support points."""

    name: str
    value: Callable  # (n, d) -> (n,)
    grad: Callable   # (n, d) -> (n, d)


def exp_tilt(name, g, grad_g, lam):
    """f = exp(lam * g) with gradient lam * grad_g * f."""
    def value(x):
        return np.exp(lam * np.asarray(g(x), dtype=float))

    def grad(x):
        return lam * np.asarray(grad_g(x), dtype=float) * value(x)[:, None]

    return TestFunction(name=f"exp({lam:+.4g}*{name})", value=value, grad=grad)


def default_tilt_family(dim, lambdas=None, thresholds=(-0.5, 0.0, 0.5), width=1.0):
    """Exponential tilts of coordinates, pairwise differences, smooth indicators."""
    if lambdas is None:
        lambdas = np.geomspace(0.05, 1.6, 10)
    gens = []
    for k in range(dim):
        gens.append((f"x{k}", lambda x, k=k: x[:, k],
                     lambda x, k=k: np.eye(dim)[k][None, :].repeat(len(x), 0)))
    for i in range(dim):
        for j in range(i + 1, dim):
            e = np.zeros(dim); e[i] = 1.0; e[j] = -1.0
            gens.append((f"x{i}-x{j}", lambda x, i=i, j=j: x[:, i] - x[:, j],
                         lambda x, e=e: e[None, :].repeat(len(x), 0)))
    for th in thresholds:
        def gval(x, th=th):
            return np.tanh((x[:, 0] - th) / width)

        def ggrad(x, th=th):
            out = np.zeros_like(x)
            out[:, 0] = (1.0 / width) / np.cosh((x[:, 0] - th) / width) ** 2
            return out
        gens.append((f"tanh((x0{-th:+g})/{width:g})", gval, ggrad))
    fam = []
    for name, g, gg in gens:
        for lam in lambdas:
            fam.append(exp_tilt(name, g, gg, float(lam)))
            fam.append(exp_tilt(name, g, gg, -float(lam)))
    return fam


def pair_difference_family(i=0, j=1, lambdas=None):
    """Tilts of the fixed pairwise difference x_i - x_j (tangent to the hyperplane)."""
    if lambdas is None:
        lambdas = np.geomspace(0.1, 1.2, 8)
    fam = []
    for lam in lambdas:
        for s in (1.0, -1.0):
            def g(x, i=i, j=j):
                return x[:, i] - x[:, j]

            def gg(x, i=i, j=j):
                out = np.zeros_like(x)
                out[:, i] = 1.0
                out[:, j] = -1.0
                return out
            fam.append(exp_tilt(f"x{i}-x{j}", g, gg, s * float(lam)))
    return fam


@dataclass(frozen=True)
class MlsiEstimate:
    """Family-restricted infimum of energy/entropy; an upper bound for the
    optimal modified-LSI constant, reported with its family id."""

    p: float
    q: float
    rho_hat: float
    family_id: str
    n_functions: int
    argmin_id: str

    def to_json(self):
        return json.dumps({
            "p": self.p, "q": self.q, "rho_hat": self.rho_hat,
            "family_id": self.family_id, "n_functions": self.n_functions,
            "argmin_id": self.argmin_id,
        })


def estimate_best_rho(measure, p, family, family_id="custom"):
    """inf over the family of mlsi_energy / entropy.

    Members with entropy below 1e-12 carry no information about the constant
    (0/0 limits) and are skipped; an all-skipped family is an error.
    """
    q = dual_exponent(p)
    _, pts = _weights_points(measure)
    best = math.inf
    best_id = None
    n_used = 0
    for tf in family:
        f = np.asarray(tf.value(pts), dtype=float)
        ent = entropy(f, measure)
        if ent < 1e-12:
            continue
        en = mlsi_energy(f, tf.grad(pts), measure, q)
        n_used += 1
        ratio = en / ent
        if ratio < best:
            best = ratio
            best_id = tf.name
    if best_id is None:
        raise EmptyFamilyError("every family member has degenerate entropy")
    return MlsiEstimate(p=float(p), q=q, rho_hat=float(best),
                        family_id=family_id, n_functions=n_used, argmin_id=best_id)


def bakry_emery(rho, p):
    """Modified-LSI constant (rho/q)**(q-1) for a uniformly p-convex potential."""
    if rho <= 0:
        raise DomainError("rho must be positive")
    q = dual_exponent(p)
    return (rho / q) ** (q - 1.0)


def tensorize(rho1, rho2):
    """Product-measure constant min(rho1, rho2)."""
    if rho1 <= 0 or rho2 <= 0:
        raise DomainError("constants must be positive")
    return min(rho1, rho2)


def holley_stroock(rho, osc_value):
    """Bounded-perturbation constant exp(-2*osc)*rho (conservative direction).

    See the module docstring: the returned constant weakens with the
    oscillation; report emitters also record the literal exp(+2*osc)*rho.
    """
    if rho <= 0:
        raise DomainError("rho must be positive")
    if osc_value < 0:
        raise DomainError("oscillation must be nonnegative")
    return math.exp(-2.0 * osc_value) * rho


def holley_stroock_literal(rho, osc_value):
    """The literal strengthening form exp(+2*osc)*rho, recorded for traceability."""
    return math.exp(2.0 * osc_value) * rho


@dataclass(frozen=True)
class MarginTable:
    """Per-parameter margins of an inequality check (>= 0 means satisfied)."""

    label: str
    params: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    margins: np.ndarray
    passed: bool
    extra: dict = field(default_factory=dict)

    def worst(self):
        k = int(np.argmin(self.margins))
        return float(self.params[k]), float(self.margins[k])

    def to_json(self):
        return json.dumps({
            "label": self.label,
            "table": [
                {"param": float(p), "lhs": float(l), "rhs": float(r), "margin": float(m)}
                for p, l, r, m in zip(self.params, self.lhs, self.rhs, self.margins)
            ],
            "pass": bool(self.passed),
            "worst_case": {"param": self.worst()[0], "margin": self.worst()[1]},
            **self.extra,
        })

    def to_csv(self):
        buf = io.StringIO()
        buf.write("param,lhs,rhs,margin\n")
        for p, l, r, m in zip(self.params, self.lhs, self.rhs, self.margins):
            buf.write(f"{p:.17g},{l:.17g},{r:.17g},{m:.17g}\n")
        return buf.getvalue()


def laplace_bound_check(measure_1d, f, rho, q, lambda_grid, lipschitz_tol=1e-9):
    """Herbst bound margins: log RHS - log LHS per lambda >= 0.

    ``f`` is a callable or an array of values on the support; it is verified
    1-Lipschitz on the (sorted) support and recentred to mean zero. The right
    side is exp(lambda**q / (rho*(q-1))).
    """
    if not isinstance(measure_1d, DiscretizedMeasure) or measure_1d.dim != 1:
        raise TypeError("laplace_bound_check expects a 1D DiscretizedMeasure")
    xs = measure_1d.points()[:, 0]
    order = np.argsort(xs)
    fv = np.asarray(f(xs) if callable(f) else f, dtype=float)
    dx = np.diff(xs[order])
    df = np.abs(np.diff(fv[order]))
    if np.any(df > np.abs(dx) * (1.0 + lipschitz_tol) + 1e-300):
        raise LipschitzError("function exceeds slope 1 on the support")
    w = measure_1d.weights
    fv = fv - float(np.sum(w * fv))
    lam = np.asarray(lambda_grid, dtype=float)
    if np.any(lam < 0):
        raise ValueError("lambda grid must be nonnegative")
    # log sum w exp(lam f) per lambda, shift-stabilized
    shift = lam[:, None] * fv[None, :]
    mx = shift.max(axis=1, keepdims=True)
    log_lhs = (mx[:, 0] + np.log(np.sum(w[None, :] * np.exp(shift - mx), axis=1)))
    log_rhs = lam**q / (rho * (q - 1.0))
    margins = log_rhs - log_lhs
    return MarginTable(
        label="laplace-herbst", params=lam, lhs=log_lhs, rhs=log_rhs,
        margins=margins, passed=bool(np.all(margins >= -1e-9)),
        extra={"rho": rho, "q": q},
    )


def concentration_check(batch, f, c, p, r_grid):
    """Empirical exceedance vs exp(-c r^p / (p (p-1)^(p-1))) with Wilson CIs.

    A grid point passes when the empirical tail is below the bound or its
    lower confidence limit is (no significant violation).
    """
    fv = np.asarray(f(batch.data) if callable(f) else f, dtype=float)
    n = fv.size
    if n == 0:
        raise ValueError("empty batch")
    mean = float(fv.mean())
    rs = np.asarray(r_grid, dtype=float)
    bound = np.exp(-c * rs**p / (p * (p - 1.0) ** (p - 1.0)))
    emp = np.array([(fv >= mean + r).mean() for r in rs])
    z = 1.96
    denom = 1.0 + z * z / n
    center = (emp + z * z / (2 * n)) / denom
    half = z * np.sqrt(emp * (1 - emp) / n + z * z / (4 * n * n)) / denom
    ci_lo = np.maximum(center - half, 0.0)
    ci_hi = np.minimum(center + half, 1.0)
    margins = bound - emp
    ok = (emp <= bound) | (ci_lo <= bound)
    return MarginTable(
        label="p-exponential-concentration", params=rs, lhs=emp, rhs=bound,
        margins=margins, passed=bool(np.all(ok)),
        extra={"c": c, "p": p, "n": n,
               "ci_lo": [float(v) for v in ci_lo],
               "ci_hi": [float(v) for v in ci_hi]},
    )


@dataclass(frozen=True)
class TalagrandReport:
    p: float
    rho_tilde: float
    wpp: float
    wpp_se: float
    entropy: float
    entropy_se: float
    margin: float
    margin_se: float
    passed: bool

    def to_json(self):
        return json.dumps({
            "inputs": {"p": self.p, "rho_tilde": self.rho_tilde,
                       "entropy": self.entropy, "entropy_se": self.entropy_se},
            "table": [{"wpp": self.wpp, "wpp_se": self.wpp_se,
                       "margin": self.margin, "margin_se": self.margin_se}],
            "pass": self.passed,
            "worst_case": {"margin": self.margin},
        })


def talagrand_check(mu_batch, nu_batch, p, rho_tilde, entropy_value,
                    entropy_se=0.0, n_splits=8, seed=0):
    """Margin (p/rho_tilde) * Ent_mu(nu) - W_p^p(mu, nu) from sample batches.

    ``entropy_value`` is the relative entropy of nu against mu, computed by
    the caller from a known density (closed form or quadrature). W_p comes
    from exact matching; its spread over random disjoint sub-batch pairs
    provides the standard error. Passes when margin >= -3 combined SE.
    """
    from .transport import wasserstein_matching
    if mu_batch.n_samples != nu_batch.n_samples:
        raise ValueError("batches must have equal size for the matching route")
    n = mu_batch.n_samples
    w = wasserstein_matching(mu_batch.data, nu_batch.data, p)
    wpp = w.wpp
    rng = np.random.default_rng(seed)
    k = max(2, n_splits)
    size = n // k
    vals = []
    for b in range(k):
        ia = rng.permutation(n)[:size]
        ib = rng.permutation(n)[:size]
        vals.append(wasserstein_matching(mu_batch.data[ia], nu_batch.data[ib], p).wpp)
    wpp_se = float(np.std(vals, ddof=1) / math.sqrt(k))
    bound = (p / rho_tilde) * entropy_value
    margin = bound - wpp
    margin_se = math.sqrt(wpp_se**2 + ((p / rho_tilde) * entropy_se) ** 2)
    return TalagrandReport(
        p=float(p), rho_tilde=float(rho_tilde), wpp=float(wpp), wpp_se=wpp_se,
        entropy=float(entropy_value), entropy_se=float(entropy_se),
        margin=float(margin), margin_se=margin_se,
        passed=bool(margin >= -3.0 * margin_se),
    )


def entropy_decomposition_check(joint, partition_map, f_values):
    """Exact residual of Ent(f) = Ent(f_bar over blocks) + sum_blocks Ent within.

    ``joint`` is a DiscretizedMeasure; ``partition_map`` assigns each support
    point a block label (the conditioning value). Everything is evaluated
    exactly on the table; the residual should be at rounding level.
    """
    w, _ = _weights_points(joint)
    f = np.asarray(f_values, dtype=float)
    if np.any(f <= 0):
        raise DomainError("decomposition check requires positive f")
    labels = np.asarray(partition_map)
    if labels.shape[0] != w.shape[0]:
        raise PartitionError("partition_map length mismatch")
    total = entropy(f, joint)
    uniq = np.unique(labels)
    wbar = np.empty(len(uniq))
    fbar = np.empty(len(uniq))
    inner = 0.0
    for k, lab in enumerate(uniq):
        mask = labels == lab
        wb = float(w[mask].sum())
        if wb <= 0:
            raise PartitionError(f"empty block {lab!r}")
        wbar[k] = wb
        cond_w = w[mask] / wb
        fk = f[mask]
        fbar[k] = float(np.sum(cond_w * fk))
        s1 = float(np.sum(cond_w * fk * np.log(fk)))
        inner += wb * (s1 - fbar[k] * math.log(fbar[k]))
    s1 = float(np.sum(wbar * fbar * np.log(fbar)))
    s0 = float(np.sum(wbar * fbar))
    outer = s1 - s0 * math.log(s0)
    return total - (outer + inner)
