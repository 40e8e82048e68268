"""Batch experiment harness: subcommands over the laboratory modules.

Experiments are described by a JSON config file plus flag overrides; the
resolved config (seed always explicit) is echoed verbatim into the output
directory so any run can be reproduced bit-for-bit. Every run writes a
manifest with the config, package versions, wall time and artifact list.
Artifacts are JSON or CSV only; plotting stays external.

    spinlab renorm   --potential double-well --iterations 6
    spinlab cramer   --potential "x2/2+0.5cos" --K 2,4,8,16
    spinlab mlsi     --potential double-well --N 4
    spinlab kawasaki --potential gaussian --N 2
    spinlab transport --batch-a a.bin --batch-b b.bin --p 2
    spinlab certify  --input rpsi.json --p 4

Global flags: --config <path>, --seed <u64>, --out <dir>, --threads <n>.
The environment variable SPINLAB_OUT sets the default output root.
"""

import argparse
import json
import os
import secrets
import sys
import time

import numpy as np

from . import __version__
from .errors import ConfigError, SpinLabError
from .potential import GridSpec, make_double_well, make_gaussian, \
    make_quadratic_plus_cosine, make_quadratic_plus_power

_SUBCOMMANDS = ("renorm", "cramer", "mlsi", "kawasaki", "transport", "certify")

_KNOWN_KEYS = {
    "renorm": {"potential", "iterations", "grid_halfwidth", "grid_step",
               "shrink_margin", "certify_triples", "rel_tol"},
    "cramer": {"potential", "K", "m_min", "m_max", "m_points",
               "grid_halfwidth", "grid_step", "rel_tol"},
    "mlsi": {"potential", "N", "m", "p", "n_samples", "thinning", "burn_in",
             "step_scale"},
    "kawasaki": {"potential", "N", "m", "p", "h", "T", "n_paths",
                 "initial_law", "shift_scale", "n_checkpoints",
                 "transport_method", "n_eq_samples", "eq_thinning"},
    "transport": {"batch_a", "batch_b", "p", "method", "epsilon"},
    "certify": {"input", "p", "n_triples"},
}
_GLOBAL_KEYS = {"subcommand", "seed", "out", "threads"}


def parse_potential(spec):
    """Potential family from a compact string.

    Accepts the canonical names 'gaussian', 'double-well', algebraic
    shorthands 'x2/2', 'x2/2+<eps>cos', 'x2/2+<b>x4', 'x2/2+|x|4', and the
    parametric form 'quad-power:a=..,b=..,p=..'.
    """
    s = spec.strip().lower().replace(" ", "")
    if s in ("gaussian", "x2/2"):
        return make_gaussian()
    if s == "double-well":
        return make_double_well()
    if s.startswith("quad-power:"):
        kv = dict(item.split("=") for item in s.split(":", 1)[1].split(","))
        return make_quadratic_plus_power(a=float(kv.get("a", 1.0)),
                                         b=float(kv.get("b", 1.0)),
                                         p=float(kv.get("p", 4.0)))
    if s.startswith("x2/2+") and s.endswith("cos"):
        mid = s[len("x2/2+"):-len("cos")]
        eps = float(mid) if mid else 1.0
        return make_quadratic_plus_cosine(eps=eps)
    if s.startswith("x2/2+") and (s.endswith("x4") or s.endswith("|x|4")):
        mid = s[len("x2/2+"):]
        mid = mid[:-len("|x|4")] if mid.endswith("|x|4") else mid[:-len("x4")]
        b = float(mid) if mid else 1.0
        return make_quadratic_plus_power(a=1.0, b=b, p=4.0)
    raise ConfigError(f"unknown potential spec {spec!r}")


def atomic_write(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


class _Run:
    def __init__(self, config, out_dir):
        self.config = config
        self.out_dir = out_dir
        self.artifacts = []
        os.makedirs(out_dir, exist_ok=True)

    def write(self, name, text):
        atomic_write(os.path.join(self.out_dir, name), text)
        self.artifacts.append(name)

    def finish(self, wall):
        manifest = {
            "config": self.config,
            "versions": {
                "spinlab": __version__,
                "numpy": np.__version__,
                "python": sys.version.split()[0],
            },
            "wall_time_s": wall,
            "artifacts": sorted(self.artifacts),
        }
        atomic_write(os.path.join(self.out_dir, "manifest.json"),
                     json.dumps(manifest, indent=1, sort_keys=True))


def _validate_config(cfg):
    sub = cfg.get("subcommand")
    if sub not in _SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {sub!r}")
    allowed = _KNOWN_KEYS[sub] | _GLOBAL_KEYS
    for key in cfg:
        if key not in allowed:
            raise ConfigError(f"unknown config field {key!r} for subcommand {sub!r}")
    return cfg


def _run_renorm(cfg, run):
    from .renorm import certify_p_convexity, iterate_renormalize, mass_window
    from .quadrature import QuadratureSpec
    pot = parse_potential(cfg["potential"])
    hw = float(cfg.get("grid_halfwidth", 6.0))
    step = float(cfg.get("grid_step", 0.04))
    grid = GridSpec(-hw, hw, int(round(2 * hw / step)) + 1)
    quad = QuadratureSpec(rel_tol=float(cfg.get("rel_tol", 1e-10)))
    iters = iterate_renormalize(pot, int(cfg.get("iterations", 4)), grid, quad,
                                shrink_margin=float(cfg.get("shrink_margin", 0.5)))
    for k, tab in enumerate(iters, start=1):
        run.write(f"renormalized_{k:02d}.json", tab.to_json())
        rep = certify_p_convexity(mass_window(tab), pot.p,
                                  n_triples=int(cfg.get("certify_triples", 4096)),
                                  rng_seed=cfg["seed"])
        run.write(f"certification_{k:02d}.json", rep.to_json())


def _run_cramer(cfg, run):
    from .cramer import cramer_deficit
    from .quadrature import QuadratureSpec
    pot = parse_potential(cfg["potential"])
    ks = [int(v) for v in str(cfg.get("K", "2,4")).split(",")]
    m_grid = GridSpec(float(cfg.get("m_min", -2.0)), float(cfg.get("m_max", 2.0)),
                      int(cfg.get("m_points", 41)))
    quad = QuadratureSpec(rel_tol=float(cfg.get("rel_tol", 1e-10)))
    hw = float(cfg.get("grid_halfwidth", 12.0))
    step = float(cfg.get("grid_step", 0.02))
    tab_grid = GridSpec(-hw, hw, int(round(2 * hw / step)) + 1)
    summary = []
    for K in ks:
        table = cramer_deficit(pot, K, m_grid, quad, tab_grid=tab_grid)
        run.write(f"deficit_K{K:03d}.csv", table.to_csv())
        summary.append({"K": K, "max_deficit": table.max_deficit})
    run.write("deficit_summary.json", json.dumps(summary, indent=1))


def _run_mlsi(cfg, run):
    from .ensemble import CanonicalEnsemble, sample_canonical
    from .functional import estimate_best_rho, pair_difference_family
    pot = parse_potential(cfg["potential"])
    n = int(cfg.get("N", 4))
    ens = CanonicalEnsemble(n, float(cfg.get("m", 0.0)), pot)
    batch = sample_canonical(
        ens, int(cfg.get("n_samples", 4000)),
        step_scale=float(cfg.get("step_scale", 0.8)),
        burn_in=int(cfg.get("burn_in", 200)),
        thinning=int(cfg.get("thinning", 4)), seed=cfg["seed"])
    est = estimate_best_rho(batch, float(cfg.get("p", pot.p)),
                            pair_difference_family(), "pair-difference-tilts")
    run.write("mlsi_estimate.json", est.to_json())


def _run_kawasaki(cfg, run):
    from .ensemble import CanonicalEnsemble, sample_canonical
    from .kawasaki import KawasakiConfig, decay_experiment
    pot = parse_potential(cfg["potential"])
    n = int(cfg.get("N", 4))
    ens = CanonicalEnsemble(n, float(cfg.get("m", 0.0)), pot)
    n_paths = int(cfg.get("n_paths", 1024))
    eq = sample_canonical(ens, int(cfg.get("n_eq_samples", n_paths)),
                          thinning=int(cfg.get("eq_thinning", 4)),
                          seed=cfg["seed"] + 1)
    T = float(cfg.get("T", 1.0))
    ncp = int(cfg.get("n_checkpoints", 10))
    kcfg = KawasakiConfig(
        N=n, h=float(cfg.get("h", 0.01)), T=T, n_paths=n_paths,
        initial_law=str(cfg.get("initial_law", "shifted-point")),
        seed=cfg["seed"], shift_scale=float(cfg.get("shift_scale", 1.0)),
        checkpoint_times=tuple(np.linspace(T / ncp, T, ncp)),
    )
    trace = decay_experiment(ens, kcfg, float(cfg.get("p", 2.0)), eq,
                             transport_method=str(cfg.get("transport_method", "matching")))
    run.write("decay_trace.csv", trace.to_csv())
    run.write("decay_header.json", trace.header_json(
        N=n, m=ens.m, h=kcfg.h, seed=cfg["seed"]))


def _run_transport(cfg, run):
    from .ensemble import load_batch
    from .transport import wasserstein_matching, wasserstein_sinkhorn
    a = load_batch(cfg["batch_a"])
    b = load_batch(cfg["batch_b"])
    p = float(cfg.get("p", 2.0))
    method = str(cfg.get("method", "matching"))
    if method == "sinkhorn":
        res = wasserstein_sinkhorn(a.data, b.data, p,
                                   epsilon=float(cfg.get("epsilon", 1e-2)))
    else:
        res = wasserstein_matching(a.data, b.data, p)
    run.write("wasserstein.json", res.to_json())


def _run_certify(cfg, run):
    from .potential import TabulatedPotential
    from .renorm import certify_p_convexity
    with open(cfg["input"]) as fh:
        tab = TabulatedPotential.from_json(fh.read())
    rep = certify_p_convexity(tab, float(cfg.get("p", tab.p)),
                              n_triples=int(cfg.get("n_triples", 4096)),
                              rng_seed=cfg["seed"])
    run.write("certification.json", rep.to_json())


_RUNNERS = {
    "renorm": _run_renorm,
    "cramer": _run_cramer,
    "mlsi": _run_mlsi,
    "kawasaki": _run_kawasaki,
    "transport": _run_transport,
    "certify": _run_certify,
}


def run(config):
    """Execute a resolved config; returns the output directory."""
    cfg = _validate_config(dict(config))
    out_dir = cfg["out"]
    runner = _RUNNERS[cfg["subcommand"]]
    r = _Run(cfg, out_dir)
    t0 = time.time()
    r.write("resolved_config.json", json.dumps(cfg, indent=1, sort_keys=True))
    runner(cfg, r)
    r.finish(time.time() - t0)
    return out_dir


def _build_parser():
    ap = argparse.ArgumentParser(prog="spinlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="subcommand", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=1,
                        help="worker hint recorded in the manifest (pipelines are deterministic)")

    pr = sub.add_parser("renorm", parents=[common])
    pr.add_argument("--potential", default=None)
    pr.add_argument("--iterations", type=int, default=None)
    pr.add_argument("--grid-halfwidth", dest="grid_halfwidth", type=float, default=None)
    pr.add_argument("--grid-step", dest="grid_step", type=float, default=None)

    pc = sub.add_parser("cramer", parents=[common])
    pc.add_argument("--potential", default=None)
    pc.add_argument("--K", default=None)
    pc.add_argument("--m-min", dest="m_min", type=float, default=None)
    pc.add_argument("--m-max", dest="m_max", type=float, default=None)
    pc.add_argument("--m-points", dest="m_points", type=int, default=None)

    pm = sub.add_parser("mlsi", parents=[common])
    pm.add_argument("--potential", default=None)
    pm.add_argument("--N", type=int, default=None)
    pm.add_argument("--m", type=float, default=None)
    pm.add_argument("--n-samples", dest="n_samples", type=int, default=None)

    pk = sub.add_parser("kawasaki", parents=[common])
    pk.add_argument("--potential", default=None)
    pk.add_argument("--N", type=int, default=None)
    pk.add_argument("--m", type=float, default=None)
    pk.add_argument("--h", type=float, default=None)
    pk.add_argument("--T", type=float, default=None)
    pk.add_argument("--n-paths", dest="n_paths", type=int, default=None)

    pt = sub.add_parser("transport", parents=[common])
    pt.add_argument("--batch-a", dest="batch_a", default=None)
    pt.add_argument("--batch-b", dest="batch_b", default=None)
    pt.add_argument("--p", type=float, default=None)
    pt.add_argument("--method", default=None)
    pt.add_argument("--epsilon", type=float, default=None)

    pz = sub.add_parser("certify", parents=[common])
    pz.add_argument("--input", default=None)
    pz.add_argument("--p", type=float, default=None)
    pz.add_argument("--n-triples", dest="n_triples", type=int, default=None)
    return ap


def resolve_config(argv):
    """Merge config file and flag overrides into one explicit dict."""
    ap = _build_parser()
    ns = ap.parse_args(argv)
    cfg = {}
    if ns.config:
        with open(ns.config) as fh:
            try:
                cfg.update(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}")
    for key, val in vars(ns).items():
        if key == "config" or val is None:
            continue
        cfg[key] = val
    cfg.setdefault("threads", 1)
    if cfg.get("seed") is None:
        cfg["seed"] = secrets.randbits(32)
    cfg["seed"] = int(cfg["seed"])
    if cfg.get("out") is None:
        root = os.environ.get("SPINLAB_OUT", "spinlab-out")
        cfg["out"] = os.path.join(root, f"{cfg['subcommand']}-{cfg['seed']:08x}")
    return _validate_config(cfg)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = resolve_config(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        out = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SpinLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
