"""Command-line entry point.

Subcommands
-----------
fit        sample (k, z) for a CSV dataset and write plot-ready outputs
diagnose   k posterior and autocorrelation times from a fit directory
mi         per-question mutual information from a categorical fit
consensus  consensus matrix and optional spectral grouping
synth      write a synthetic dataset with its true labels
bench      ms/sweep and mixing time on synthetic Gaussian data

Output files written by ``fit`` into ``--out``:

metadata.json           resolved parameters, seed, versions, data checksum
kposterior.csv          k,probability (all chains merged)
kposterior_chains.csv   chain,k,probability
trace_chain<C>.csv      sweep,k,logpost,loglik,dwell
tau.json                integrated autocorrelation of loglik, in sweeps
components.json         posterior summaries at the best retained partition
map_assignment.csv      obs,label for that partition
fitted.csv              posterior-mean mixture density at that partition
                        (gaussian: x,density; poisson: x,probability)
assignments_chain<C>.csv  sweep,z_1..z_N (with --record-assignments)
consensus.csv           N x N co-membership matrix (with --consensus)
levels.csv              question,code,level (categorical data)

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataError, Dataset, ingest
from .diagnostics import (
    consensus,
    integrated_autocorrelation,
    k_posterior,
    mutual_information,
    spectral_consensus,
)
from .models import estimate_parameters, model_from_name
from .priors import PriorConfig
from .sampler import RNG_DESCRIPTION, RunConfig, run
from .synthdata import SynthSpec, generate

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
CONSENSUS_LIMIT = 20_000
TAU_METHOD = "FFT autocorrelation, self-consistent window W = min{t : t >= 5 tau(t)}"
KIND_OF_MODEL = {"gaussian": "real", "poisson": "count", "categorical": "categorical",
                 "null": "categorical"}


class ConfigError(ValueError):
    """Inconsistent command-line configuration."""


def _fmt(x) -> str:
    return repr(float(x))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _versions() -> dict:
    import numba
    import scipy

    return {"mixmc": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# -- fit ------------------------------------------------------------------------


def _build_model(args):
    name = args.model
    if name == "gaussian":
        return model_from_name(name, sigma2=args.sigma2, prior_width=args.prior_width)
    if name == "poisson":
        return model_from_name(name, gamma_shape=args.gamma_shape, gamma_rate=args.gamma_rate)
    if name == "categorical":
        return model_from_name(name, eta=args.theta_eta)
    return model_from_name(name)


def _load_dataset(path, model_name, header, missing_as_category, missing_token) -> Dataset:
    kind = KIND_OF_MODEL[model_name]
    return ingest(path, kind, header=header, missing_as_category=missing_as_category,
                  missing_token=missing_token)


def _model_values(ds: Dataset, model_name: str):
    if model_name == "null":
        return np.zeros(ds.n_obs)
    return ds.values


def _fitted_density(model, params, values):
    if model.name == "gaussian":
        lo, hi = float(values.min()), float(values.max())
        pad = 3.0 * np.sqrt(model.sigma2)
        grid = np.linspace(lo - pad, hi + pad, 400)
        dens = np.zeros_like(grid)
        for c in params:
            var = model.sigma2
            dens += c["share"] * np.exp(-0.5 * (grid - c["mean"]) ** 2 / var) / np.sqrt(2 * np.pi * var)
        return ("x", "density"), grid, dens
    if model.name == "poisson":
        from scipy.stats import poisson

        grid = np.arange(int(values.max()) + 1)
        prob = np.zeros(len(grid))
        for c in params:
            prob += c["share"] * poisson.pmf(grid, c["mean"])
        return ("x", "probability"), grid, prob
    return None


def cmd_fit(args) -> int:
    if args.chains < 1:
        raise ConfigError("--chains must be >= 1")
    try:
        prior = PriorConfig.parse(args.k_prior, eta=args.eta)
        model = _build_model(args)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    general = True if args.general_eta else None
    if prior.eta != 1.0:
        general = True

    ds = _load_dataset(args.data, args.model, args.header, args.missing_as_category,
                       args.missing_token)
    values = _model_values(ds, args.model)
    try:
        model = model.resolve(values)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if args.consensus and ds.n_obs > CONSENSUS_LIMIT and not args.allow_large_consensus:
        raise ConfigError(
            f"consensus for N={ds.n_obs} > {CONSENSUS_LIMIT} needs --allow-large-consensus"
        )

    cfgs = []
    for c in range(args.chains):
        try:
            cfgs.append(RunConfig(
                model=model, prior=prior, burn_in_sweeps=args.burnin, sample_sweeps=args.sweeps,
                thin=args.thin, seed=args.seed, chain=c, general_eta=general,
                record_assignments=args.record_assignments, record_coincidence=args.consensus,
                init=args.init,
            ))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def one(cfg):
        return run(values, cfg)

    if args.chains == 1:
        results = [one(cfgs[0])]
    else:
        with ThreadPoolExecutor(max_workers=min(args.chains, args.threads or args.chains)) as ex:
            results = list(ex.map(one, cfgs))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ks = np.concatenate([r.k for r in results])
    dw = np.concatenate([r.dwell for r in results])
    kp = k_posterior(ks, dw)
    _write_rows(out / "kposterior.csv", ("k", "probability"),
                [(k, _fmt(p)) for k, p in kp.rows()])
    rows = []
    for c, r in enumerate(results):
        rows += [(c, k, _fmt(p)) for k, p in k_posterior(r).rows()]
    _write_rows(out / "kposterior_chains.csv", ("chain", "k", "probability"), rows)

    taus = []
    for c, r in enumerate(results):
        _write_rows(
            out / f"trace_chain{c}.csv", ("sweep", "k", "logpost", "loglik", "dwell"),
            [(int(s), int(k), _fmt(lp), _fmt(ll), _fmt(d)) for s, k, lp, ll, d in
             zip(r.sweeps, r.k, r.log_posterior, r.log_likelihood, r.dwell)],
        )
        if r.assignments is not None:
            _write_rows(out / f"assignments_chain{c}.csv",
                        ["sweep"] + [f"z{i}" for i in range(r.n_obs)],
                        [[int(s)] + row.tolist() for s, row in zip(r.sweeps, r.assignments)])
        taus.append(_tau_report(r.log_likelihood, args.thin, c))
    _write_json(out / "tau.json", {"method": TAU_METHOD, "units": "sweeps", "chains": taus})

    if args.consensus:
        acc = sum(r.coincidence for r in results)
        merged = consensus(_Merged(acc, dw))
        np.savetxt(out / "consensus.csv", merged.matrix, delimiter=",", fmt="%.10g")

    best = max(results, key=lambda r: r.best_log_posterior)
    params = estimate_parameters(model, best.best_assignment, values)
    _write_json(out / "components.json", {
        "partition": "highest log posterior among retained samples (all chains)",
        "log_posterior": best.best_log_posterior, "k": len(params), "components": params,
    })
    _write_rows(out / "map_assignment.csv", ("obs", "label"),
                list(enumerate(best.best_assignment.tolist())))
    fitted = _fitted_density(model, params, values)
    if fitted is not None:
        header, grid, dens = fitted
        _write_rows(out / "fitted.csv", header,
                    [(_fmt(g) if model.name == "gaussian" else int(g), _fmt(d))
                     for g, d in zip(grid, dens)])
    if ds.kind == "categorical" and ds.levels is not None:
        _write_rows(out / "levels.csv", ("question", "code", "level"),
                    [(e["question"], e["code"], e["level"]) for e in ds.level_table()])

    meta = {
        "command": "fit",
        "argv": sys.argv[1:],
        "versions": _versions(),
        "data": {"path": str(Path(args.data).resolve()), "sha256": _sha256(args.data),
                 "kind": ds.kind, "n_obs": ds.n_obs, "columns": ds.columns,
                 "header": args.header, "missing_as_category": args.missing_as_category,
                 "missing_token": args.missing_token,
                 "cardinalities": list(ds.cardinalities) if ds.cardinalities else None},
        "model": {"name": model.name, **model.params()},
        "prior": {"k_prior": prior.describe(), "eta": prior.eta},
        "run": {"burn_in_sweeps": args.burnin, "sample_sweeps": args.sweeps, "thin": args.thin,
                "seed": args.seed, "chains": args.chains, "init": args.init,
                "general_eta_kernel": results[0].general,
                "record_assignments": args.record_assignments, "consensus": args.consensus},
        "rng": RNG_DESCRIPTION,
        "sampling": "records at step boundaries; estimators weight each record by its dwell",
        "map_k": kp.map_k,
        "tau_method": TAU_METHOD,
        "fitted_density": "posterior-mean parameters at the best retained partition",
        "chains": [r.summary() for r in results],
    }
    _write_json(out / "metadata.json", meta)
    print(f"N={ds.n_obs}  MAP k={kp.map_k}  P(MAP)={kp.prob(kp.map_k):.3f}  "
          f"ms/sweep={1e3 * np.mean([r.seconds_per_sweep for r in results]):.3f}  "
          f"tau={taus[0]['tau_sweeps']:.3g} sweeps  -> {out}")
    return EXIT_OK


class _Merged:
    # minimal stand-in for a run result carrying a merged coincidence accumulator
    def __init__(self, coincidence, dwell):
        self.coincidence = coincidence
        self.dwell = dwell


def _tau_report(series, thin, chain) -> dict:
    est = integrated_autocorrelation(series)
    return {"chain": chain, "tau_sweeps": est.tau * thin, "tau_records": est.tau,
            "window_records": est.window, "n_records": est.n, "constant": est.constant,
            "short_series": est.short}


# -- downstream commands ----------------------------------------------------------


def _read_meta(run_dir: Path) -> dict:
    path = run_dir / "metadata.json"
    if not path.is_file():
        raise DataError(f"{path} not found; run 'fit' first")
    with open(path) as fh:
        return json.load(fh)


def _read_traces(run_dir: Path):
    paths = sorted(run_dir.glob("trace_chain*.csv"), key=lambda p: int(p.stem[11:]))
    if not paths:
        raise DataError(f"no trace files in {run_dir}")
    out = []
    for p in paths:
        a = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
        out.append(a)
    return out


def _read_assignments(run_dir: Path):
    paths = sorted(run_dir.glob("assignments_chain*.csv"), key=lambda p: int(p.stem[17:]))
    if not paths:
        raise DataError(f"no assignment snapshots in {run_dir}; fit with --record-assignments")
    z, traces = [], _read_traces(run_dir)
    for p in paths:
        z.append(np.loadtxt(p, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)[:, 1:])
    dwell = np.concatenate([t[:, 4] for t in traces[: len(z)]])
    return np.concatenate(z), dwell


def cmd_diagnose(args) -> int:
    run_dir = Path(args.run)
    meta = _read_meta(run_dir)
    thin = meta["run"]["thin"]
    traces = _read_traces(run_dir)
    ks = np.concatenate([t[:, 1] for t in traces]).astype(np.int64)
    dw = np.concatenate([t[:, 4] for t in traces])
    kp = k_posterior(ks, dw)
    report = {
        "map_k": kp.map_k,
        "k_posterior": {str(k): p for k, p in kp.rows()},
        "mean_k": kp.mean(),
        "tau_method": TAU_METHOD,
        "tau": [_tau_report(t[:, 3], thin, c) for c, t in enumerate(traces)],
    }
    _write_json(run_dir / "diagnose.json", report)
    print(f"MAP k={kp.map_k}")
    for k, p in kp.rows():
        print(f"  k={k:3d}  {p:.4f}")
    for t in report["tau"]:
        print(f"chain {t['chain']}: tau_int(loglik) = {t['tau_sweeps']:.3g} sweeps")
    return EXIT_OK


def cmd_mi(args) -> int:
    run_dir = Path(args.run)
    meta = _read_meta(run_dir)
    if meta["model"]["name"] != "categorical":
        raise ConfigError("mutual information is defined for categorical fits")
    d = meta["data"]
    ds = ingest(args.data or d["path"], "categorical", header=d["header"],
                missing_as_category=d["missing_as_category"], missing_token=d["missing_token"])
    z, dwell = _read_assignments(run_dir)
    mi = mutual_information(z, ds, weights=dwell)
    order = np.argsort(-mi, kind="stable")
    _write_rows(run_dir / "mi.csv", ("question", "mi_bits"),
                [(ds.columns[q] if d["header"] else f"q{q + 1}", _fmt(mi[q])) for q in order])
    for q in order:
        name = ds.columns[q] if d["header"] else f"q{q + 1}"
        print(f"{name:>30s}  {mi[q]:.4f}")
    return EXIT_OK


def cmd_consensus(args) -> int:
    run_dir = Path(args.run)
    _read_meta(run_dir)
    path = run_dir / "consensus.csv"
    if path.is_file():
        mat = np.loadtxt(path, delimiter=",", ndmin=2)
    else:
        z, dwell = _read_assignments(run_dir)
        mat = consensus(z, weights=dwell).matrix
        np.savetxt(path, mat, delimiter=",", fmt="%.10g")
    print(f"consensus matrix {mat.shape[0]}x{mat.shape[1]} -> {path}")
    if args.k is not None:
        if args.k < 1:
            raise ConfigError("--k must be >= 1")
        labels = spectral_consensus(mat, args.k, seed=args.seed)
        _write_rows(run_dir / "consensus_labels.csv", ("obs", "label"),
                    list(enumerate(labels.tolist())))
        print(f"{len(np.unique(labels))} groups -> {run_dir / 'consensus_labels.csv'}")
    return EXIT_OK


def _floats(text):
    return tuple(float(v) for v in text.split(",")) if text else None


def cmd_synth(args) -> int:
    try:
        spec = SynthSpec(
            family=args.family, k_true=args.k, n_obs=args.n, seed=args.seed,
            spacing=args.spacing, sigma=args.sigma, means=_floats(args.means),
            weights=_floats(args.weights), n_questions=args.questions,
            n_answers=args.answers, theta_eta=args.theta_eta,
        )
        ds, labels = generate(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.write_csv(out, header=args.family != "categorical")
    lab_path = Path(args.labels) if args.labels else out.with_name(out.stem + "_labels.csv")
    _write_rows(lab_path, ("obs", "label"), list(enumerate(labels.tolist())))
    _write_json(out.with_name(out.stem + "_meta.json"),
                {"command": "synth", "argv": sys.argv[1:], "versions": _versions(),
                 "spec": spec.__dict__})
    print(f"{args.family}: N={ds.n_obs} -> {out}, labels -> {lab_path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .models import GaussianModel

    try:
        ks = [int(v) for v in args.ks.split(",")]
    except ValueError:
        raise ConfigError(f"bad --ks {args.ks!r}") from None
    rows = []
    print(f"{'k':>3s} {'MAP k':>6s} {'ms/sweep':>9s} {'steps/s':>11s} {'tau (sweeps)':>13s}")
    for k in ks:
        ds, _ = generate(SynthSpec("gaussian", k_true=k, n_obs=args.n, seed=args.seed))
        res = run(ds.values, RunConfig(model=GaussianModel(), burn_in_sweeps=args.burnin,
                                       sample_sweeps=args.sweeps, seed=args.seed))
        tau = integrated_autocorrelation(res.log_likelihood).tau
        kp = k_posterior(res)
        rows.append((k, kp.map_k, 1e3 * res.seconds_per_sweep, res.steps_per_second, tau))
        print(f"{k:3d} {kp.map_k:6d} {rows[-1][2]:9.3f} {rows[-1][3]:11.3e} {tau:13.2f}")
    if args.out:
        _write_rows(Path(args.out), ("k", "map_k", "ms_per_sweep", "steps_per_second",
                                     "tau_sweeps"),
                    [(k, m, _fmt(a), _fmt(b), _fmt(c)) for k, m, a, b, c in rows])
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------


def _add_data_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--header", dest="header", action="store_const", const=True,
                   help="first row holds column names")
    g.add_argument("--no-header", dest="header", action="store_const", const=False,
                   help="no header row (default: detected for numeric data, absent for categorical)")
    p.add_argument("--missing-as-category", action="store_true",
                   help="categorical: treat missing cells as an extra response")
    p.add_argument("--missing-token", default="", help="cell text meaning missing (default: empty)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixmc", description=__doc__.split("\n")[0],
                                 epilog=__doc__.split("\n", 2)[2],
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=f"mixmc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="run the sampler on a CSV dataset")
    p.add_argument("data", help="CSV file")
    p.add_argument("--model", required=True, choices=["gaussian", "poisson", "categorical", "null"])
    p.add_argument("--out", required=True, help="output directory")
    _add_data_flags(p)
    p.add_argument("--sigma2", type=float, default=1.0, help="gaussian: known variance")
    p.add_argument("--prior-width", type=float, default=None,
                   help="gaussian: width a of the uniform prior on means (default: range + 6 sigma)")
    p.add_argument("--gamma-shape", type=float, default=1.0, help="poisson: gamma prior shape")
    p.add_argument("--gamma-rate", type=float, default=0.01, help="poisson: gamma prior rate")
    p.add_argument("--theta-eta", type=float, default=1.0,
                   help="categorical: Dirichlet concentration of response probabilities")
    p.add_argument("--eta", type=float, default=1.0, help="assignment prior concentration")
    p.add_argument("--k-prior", default="uniform", help="uniform | geometric:A")
    p.add_argument("--burnin", type=int, default=1000, help="burn-in sweeps")
    p.add_argument("--sweeps", type=int, default=10000, help="sampling sweeps")
    p.add_argument("--thin", type=int, default=1, help="sweeps between retained samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--threads", type=int, default=0, help="worker threads (default: one per chain)")
    p.add_argument("--general-eta", action="store_true",
                   help="use the continuous-time kernel (implied when --eta != 1)")
    p.add_argument("--init", choices=["single", "random"], default="single")
    p.add_argument("--record-assignments", action="store_true")
    p.add_argument("--consensus", action="store_true", help="accumulate the consensus matrix")
    p.add_argument("--allow-large-consensus", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("diagnose", help="k posterior and tau from a fit directory")
    p.add_argument("run")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("mi", help="per-question mutual information (bits)")
    p.add_argument("run")
    p.add_argument("--data", default=None, help="override the data path stored in metadata")
    p.set_defaults(func=cmd_mi)

    p = sub.add_parser("consensus", help="consensus matrix and spectral grouping")
    p.add_argument("run")
    p.add_argument("--k", type=int, default=None, help="number of consensus groups")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_consensus)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("family", choices=["gaussian", "poisson", "categorical"])
    p.add_argument("--out", required=True)
    p.add_argument("--labels", default=None, help="label file (default: <out>_labels.csv)")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spacing", type=float, default=3.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--means", default=None, help="poisson: comma-separated rates")
    p.add_argument("--weights", default=None, help="poisson: comma-separated shares")
    p.add_argument("--questions", type=int, default=10)
    p.add_argument("--answers", type=int, default=4)
    p.add_argument("--theta-eta", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="timing and mixing on synthetic Gaussian data")
    p.add_argument("--ks", default="3,5,7,10")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--burnin", type=int, default=1000)
    p.add_argument("--sweeps", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV table")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"mixmc: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"mixmc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
