"""Command-line front end: simulate, fit, select, evaluate and the two studies.

Exit codes: 0 success, 1 numeric failure, 2 usage or IO error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .covariance import CovarianceSurface, write_surface_csv
from .crossval import CvRow, select_model
from .dataio import read_long_csv, write_long_csv
from .eigen import modified_l2_loss, read_eigen_csv, write_eigen_csv, write_eigenvalues_csv
from .errors import FpcaError, InvalidConfig, InvalidInput, NumericFailure
from .fit import FitConfig, fit_covariance, rule_of_thumb_h, rule_of_thumb_h_sigma
from .presmooth import _trapezoid_weights
from .simulate import SimulationConfig, cosine_basis, simulate_dataset
from .studies import BiasDemoConfig, SuiteConfig, bias_demo, rate_study

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
TRUTH_GRID = 101


class UsageError(Exception):
    pass


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def dump_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, args, extra: dict | None = None) -> None:
    man = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg.get("seed"),
        "versions": {
            "fpcasmooth": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "deterministic": bool(args.deterministic),
    }
    if not args.deterministic:
        man["timestamp"] = time.time()
    if extra:
        man.update(extra)
    dump_json(out / "manifest.json", man)


def parse_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def parse_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def parse_sigma(text: str):
    """``estimate`` or ``known:VALUE``."""
    if text == "estimate":
        return None
    if text.startswith("known:"):
        try:
            v = float(text.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad --sigma value {text!r}") from None
        if v < 0:
            raise UsageError("known noise variance must be nonnegative")
        return v
    raise UsageError("--sigma must be 'estimate' or 'known:VALUE'")


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: malformed JSON: {exc}") from None


def output_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


SIM_FLAGS = ("n", "m_min", "m_max", "sigma", "density", "correlation", "rho", "noise", "seed")


def cmd_simulate(args) -> int:
    d = load_json(args.sim_config) if args.sim_config else {}
    for k in SIM_FLAGS:
        v = getattr(args, k, None)
        if v is not None:
            d[k] = v
    if args.eigenvalues is not None:
        d["eigenvalues"] = parse_floats(args.eigenvalues)
    cfg = SimulationConfig.from_dict(d)
    curves, truth = simulate_dataset(cfg)
    out = output_dir(args)
    write_long_csv(out / "data.csv", curves)
    t = np.linspace(0.0, 1.0, TRUTH_GRID)
    dump_json(out / "truth.json", {
        "eigenvalues": truth.eigenvalues,
        "sigma2": truth.sigma2,
        "correlation": cfg.correlation,
        "rho": cfg.rho,
    })
    cov = truth.covariance(t, t)
    write_surface_csv(out / "truth_covariance.csv", CovarianceSurface(t, np.ones_like(t), cov, "truth"))
    with open(out / "truth_eigen.csv", "w") as fh:
        psi = cosine_basis(t, truth.M)
        fh.write(",".join(["t"] + [f"psi{k + 1}" for k in range(truth.M)]) + "\n")
        for p in range(t.size):
            fh.write(",".join(repr(float(x)) for x in [t[p], *psi[:, p]]) + "\n")
    cfg_d = json.loads(cfg.to_json())
    write_manifest(out, "simulate", cfg_d, args, {"n_rows": int(sum(c.m for c in curves))})
    return EXIT_OK


def fit_config_from_args(args, curves) -> FitConfig:
    sigma2 = parse_sigma(args.sigma)
    n = len(curves)
    m_min = max(2, min(c.m for c in curves))
    h = args.h if args.h is not None else rule_of_thumb_h(n, m_min)
    hs = args.h_sigma
    if hs is None and sigma2 is None:
        hs = rule_of_thumb_h_sigma(n, m_min)
    kw = dict(h=h, K=args.k, sigma2=sigma2, density=args.g, mean=args.mean, h_sigma=hs)
    if args.band_A is not None:
        kw["band_A"] = args.band_A
    if args.h_mu is not None:
        kw["h_mu"] = args.h_mu
    return FitConfig(**kw)


def _fit_cfg_dict(cfg: FitConfig) -> dict:
    return {
        "h": cfg.h, "K": cfg.K, "band_A": cfg.band_A, "tau": cfg.tau, "sigma2": cfg.sigma2,
        "density": cfg.density if isinstance(cfg.density, str) else cfg.density.name,
        "mean": cfg.mean, "h_mu": cfg.h_mu, "h_sigma": cfg.h_sigma,
    }


def cmd_fit(args) -> int:
    curves = read_long_csv(args.input)
    cfg = fit_config_from_args(args, curves)
    out = output_dir(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_covariance(curves, cfg)
    write_surface_csv(out / "covariance.csv", fit.merged)
    write_eigen_csv(out / "eigen.csv", fit.eig)
    write_eigenvalues_csv(out / "eigenvalues.csv", fit.eig)
    dump_json(out / "sigma2.json", {"sigma2": fit.sigma2, "sigma2_raw": fit.sigma2_raw,
                                    "estimated": cfg.sigma2 is None})
    d = _fit_cfg_dict(cfg)
    d["input"] = str(args.input)
    d["seed"] = args.seed
    write_manifest(out, "fit", d, args, {
        "warnings": sorted({f"{w.category.__name__}: {w.message}" for w in caught}),
        "rank_deficient": fit.eig.rank_deficient,
        "eigenvalues": fit.eig.values,
    })
    return EXIT_OK


def _row_path(cache: Path, K: int, h: float) -> Path:
    return cache / f"row_K{K}_h{h!r}.json"


def cmd_select(args) -> int:
    curves = read_long_csv(args.input)
    hs = parse_floats(args.h_grid)
    Ks = parse_ints(args.k_grid)
    if not hs or not Ks:
        raise UsageError("--h-grid and --k-grid must be nonempty")
    base_args = argparse.Namespace(**{**vars(args), "h": hs[0], "k": max(Ks)})
    base = fit_config_from_args(base_args, curves)
    out = output_dir(args)
    cache = out / "cache"
    cache.mkdir(exist_ok=True)
    skip = {}
    for K in Ks:
        for h in hs:
            p = _row_path(cache, K, h)
            if p.exists():
                r = load_json(p)
                if r.get("exact") == bool(args.exact):
                    skip[(K, h)] = CvRow(r["K"], r["h"], r["approx_score"], r["exact_score"],
                                         r["wall_time"], r["flagged"])

    def save(row):
        dump_json(_row_path(cache, row.K, row.h), {
            "K": row.K, "h": row.h, "approx_score": row.approx_score, "exact_score": row.exact_score,
            "wall_time": row.wall_time if not args.deterministic else 0.0,
            "flagged": row.flagged, "exact": bool(args.exact),
        })

    table = select_model(curves, hs, Ks, base, exact=args.exact, on_row=save, skip=skip)
    table.write_csv(out / "cv_table.csv")
    K_sel, h_sel = table.selected
    sel = {"K": K_sel, "h": h_sel, "flagged": [[r.K, r.h] for r in table.rows if r.flagged]}
    if args.exact:
        gaps = [abs(r.approx_score - r.exact_score) / abs(r.exact_score)
                for r in table.rows if r.exact_score is not None and np.isfinite(r.exact_score)]
        sel["max_relative_gap"] = max(gaps) if gaps else None
        sel["exact_selected"] = list(table.select_by("exact_score"))
    dump_json(out / "selected.json", sel)
    d = _fit_cfg_dict(base)
    d.update({"input": str(args.input), "h_grid": hs, "k_grid": Ks, "exact": bool(args.exact), "seed": args.seed})
    write_manifest(out, "select", d, args)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    fit_dir, truth_dir = Path(args.fit_dir), Path(args.truth_dir)
    nodes, vecs = read_eigen_csv(fit_dir / "eigen.csv")
    truth = load_json(truth_dir / "truth.json")
    M = len(truth["eigenvalues"])
    w = _trapezoid_weights(nodes, 1.0)
    psi = cosine_basis(nodes, M)
    losses = [modified_l2_loss(vecs[k], psi[k], w) for k in range(min(M, vecs.shape[0]))]
    res = {"eigenfunction_loss": losses}
    sp = fit_dir / "sigma2.json"
    if sp.exists():
        s = load_json(sp)
        res["sigma2"] = s["sigma2"]
        res["sigma2_error"] = s["sigma2"] - truth["sigma2"]
    out = output_dir(args)
    dump_json(out / "evaluation.json", res)
    write_manifest(out, "evaluate", {"fit_dir": str(fit_dir), "truth_dir": str(truth_dir), "seed": None}, args)
    return EXIT_OK


def cmd_bias_demo(args) -> int:
    cfg = BiasDemoConfig(n=args.n, m=args.m, h=args.h, sigma2=args.sigma2, seeds=args.seeds, seed=args.seed)
    res = bias_demo(cfg, threads=args.threads)
    out = output_dir(args)
    res.write_csv(out / "bias_demo.csv")
    rel = np.abs(res.observed_inflation - res.predicted_inflation) / res.predicted_inflation
    dump_json(out / "bias_summary.json", {
        "max_relative_inflation_error": float(rel.max()),
        "max_modified_error": float(np.abs(res.modified_diag_mean - res.truth).max()),
        "naive_offdiag_mean": res.naive_offdiag_mean,
        "offdiag_trivial_prediction": (1 - 1 / cfg.m) * res.offdiag_truth,
    })
    write_manifest(out, "bias-demo", dict(vars(cfg)), args)
    return EXIT_OK


def cmd_rate_study(args) -> int:
    ns = parse_ints(args.ns)
    if not ns:
        raise UsageError("--ns must be nonempty")
    cfg = SuiteConfig(m_min=args.m_min, m_max=args.m_max, correlation=args.correlation, rho=args.rho,
                      seed=args.seed, c_h=args.c)
    res = rate_study(cfg, ns, reps=args.reps, threads=args.threads)
    out = output_dir(args)
    res.write_csv(out / "rate_study.csv")
    dump_json(out / "rate_summary.json", {"slope": res.slope, "target": -0.8})
    d = dict(vars(cfg))
    d.update({"ns": ns, "reps": args.reps})
    write_manifest(out, "rate-study", d, args)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(p):
    p.add_argument("--output-dir", default=".", help="directory for all artifacts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--deterministic", action="store_true",
                   help="omit timestamps and timings so reruns are byte-identical")
    p.add_argument("--config", help="JSON file whose keys provide defaults for the flags")


def _fit_flags(p):
    p.add_argument("--input", required=True, help="long CSV with columns curve_id,t,y")
    p.add_argument("--sigma", default="estimate", help="'estimate' or 'known:VALUE'")
    p.add_argument("--g", default="uniform", choices=["uniform", "linear", "estimate"])
    p.add_argument("--mean", default="zero", choices=["zero", "estimate"])
    p.add_argument("--band-A", type=float, default=None)
    p.add_argument("--h-sigma", type=float, default=None)
    p.add_argument("--h-mu", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fpcasmooth", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic dataset")
    _common(p)
    p.add_argument("--sim-config", help="SimulationConfig JSON")
    p.add_argument("--n", type=int)
    p.add_argument("--m-min", type=int)
    p.add_argument("--m-max", type=int)
    p.add_argument("--eigenvalues")
    p.add_argument("--sigma", type=float)
    p.add_argument("--density", choices=["uniform", "linear"])
    p.add_argument("--correlation", choices=["iid", "ar1", "equi"])
    p.add_argument("--rho", type=float)
    p.add_argument("--noise", choices=["gaussian", "t5"])
    p.set_defaults(func=cmd_simulate, seed=None)

    p = sub.add_parser("fit", help="estimate covariance, eigenpairs and noise variance")
    _common(p)
    _fit_flags(p)
    p.add_argument("--h", type=float, default=None, help="bandwidth (default: rule of thumb)")
    p.add_argument("--k", type=int, default=2)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="choose (K, h) by approximate leave-one-curve-out CV")
    _common(p)
    _fit_flags(p)
    p.add_argument("--h-grid", required=True, help="comma-separated bandwidths")
    p.add_argument("--k-grid", required=True, help="comma-separated ranks")
    p.add_argument("--exact", action="store_true", help="also compute the refitting oracle")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("evaluate", help="compare a fit with a simulation truth")
    _common(p)
    p.add_argument("--fit-dir", required=True)
    p.add_argument("--truth-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bias-demo", help="diagonal inflation of naive presmoothing")
    _common(p)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--h", type=float, default=0.1)
    p.add_argument("--sigma2", type=float, default=0.25)
    p.add_argument("--seeds", type=int, default=50)
    p.set_defaults(func=cmd_bias_demo)

    p = sub.add_parser("rate-study", help="eigenfunction risk against sample size")
    _common(p)
    p.add_argument("--ns", default="100,200,400,800")
    p.add_argument("--reps", type=int, default=30)
    p.add_argument("--m-min", type=int, default=4)
    p.add_argument("--m-max", type=int, default=8)
    p.add_argument("--correlation", default="iid", choices=["iid", "ar1", "equi"])
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--c", type=float, default=None, help="bandwidth constant of the rule of thumb")
    p.set_defaults(func=cmd_rate_study)
    return ap


def _apply_config(ap, argv):
    """Re-parse with defaults taken from ``--config`` (explicit flags still win)."""
    args = ap.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    cfg = load_json(args.config)
    sub = ap._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    bad = sorted(set(k.replace("-", "_") for k in cfg) - known)
    if bad:
        raise UsageError(f"unknown config keys: {', '.join(bad)}")
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
    return ap.parse_args(argv)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = _apply_config(ap, argv)
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be at least 1")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidInput, InvalidConfig, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FpcaError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
