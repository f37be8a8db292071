"""Command-line interface: dataset generation, training, certification,
boundaries, classification, metrics, and error fits.

Every stage reads and writes persisted artifacts (datasets, checkpoints,
reports), so pipelines are resumable and reruns with unchanged inputs
produce identical artifact hashes.  Exit codes: 0 success, 2 configuration
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .certificates import PRESETS, certify_all
from .datagen import Dataset, DistSpec, gen_toy_bimodal, gen_toy_piecewise_sine, gen_wave_dataset
from .decision import fit_error_curve, make_boundary, classify as classify_cert, quadrant_metrics
from .diffcore import Checkpoint
from .diffcore.tensor import NumericalOverflowError
from .diffusion import NoiseSchedule
from .fileio import atomic_write_text, canonical_json, sha256_bytes, sha256_file
from .likelihood import SolverConfig
from .models import ModelSpec, TrainConfig, denoiser_from_checkpoint, train_denoiser, train_regressor
from .reports import Report, read_report, write_report

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

__all__ = ["main", "entrypoint", "ConfigError"]

WORKERS_ENV = "OODCERT_WORKERS"

# certificate orientation: -1 means low value = OOD (likelihood family)
METHOD_SIGNS = {"JLBC": -1, "JLBC-AR": -1, "JDPath": 1, "JSFNS": 1, "JSBDDM": 1, "JMSSM": 1}


class ConfigError(ValueError):
    """Bad flags, bad config keys, or missing/inconsistent input files."""


def _provenance(args: argparse.Namespace, inputs: dict[str, str]) -> dict:
    # the output path never affects artifact content, so it stays out of the hash
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config", "out")}
    hashes = {}
    for name, path in sorted(inputs.items()):
        if path and Path(path).exists():
            hashes[name] = sha256_file(path)
    return {
        "config_hash": sha256_bytes(canonical_json(resolved).encode()),
        "inputs": hashes,
        "versions": {"oodcert": __version__, "numpy": np.__version__,
                     "python": ".".join(map(str, sys.version_info[:2]))},
    }


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {path}")
    return p


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def _configure_gen(sub):
    p = sub.add_parser("gen", help="generate an analytic dataset")
    p.add_argument("kind", choices=["wave", "toy-bimodal", "toy-sine"])
    p.add_argument("--dist", choices=["train", "test"], default="train",
                   help="wave distribution (training or wider test ranges)")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--n-pos", type=int, default=200, help="positive-mode count (toy-bimodal)")
    p.add_argument("--nu", type=float, default=0.1, help="under-represented mode fraction")
    p.add_argument("--f", default="linear", help="target function tag (toy-bimodal)")
    p.add_argument("--desk", action="store_true", default=True,
                   help="desk-scale wave ranges (32x32 grid, scaled mode counts)")
    p.add_argument("--paper", dest="desk", action="store_false",
                   help="full wave ranges (128x128 grid, K up to 32)")
    p.add_argument("--resolution", type=int, default=0, help="grid override (0 = per scale default)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_run_gen)


def _run_gen(args) -> int:
    if args.kind == "wave":
        params = {"desk": args.desk}
        if args.resolution:
            params["resolution"] = args.resolution
        spec = DistSpec(tag=f"wave-{args.dist}", n=args.n, seed=args.seed, params=params)
        ds = gen_wave_dataset(spec)
    elif args.kind == "toy-bimodal":
        spec = DistSpec(tag="toy-bimodal", n=args.n_pos, seed=args.seed,
                        params={"nu": args.nu, "n_pos": args.n_pos, "f": args.f})
        ds = gen_toy_bimodal(spec)
    else:
        ds = gen_toy_piecewise_sine(args.n, seed=args.seed)
    ds.compute_normalization()
    ds.save(args.out)
    print(f"wrote {len(ds)} samples to {args.out} [{ds.tag}]")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _parse_hidden(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad --hidden value {text!r}") from exc


def _configure_train(sub):
    p = sub.add_parser("train", help="train the regressor or the diffusion denoiser")
    p.add_argument("target", choices=["regressor", "denoiser"])
    p.add_argument("--data", required=True, help="training dataset (.oodd)")
    p.add_argument("--arch", choices=["mlp", "conv"], default="mlp")
    p.add_argument("--hidden", default="64,64", help="comma-separated widths / channels")
    p.add_argument("--activation", choices=["silu", "tanh", "relu"], default="silu")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-schedule", choices=["constant", "cosine"], default="cosine")
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--ema-decay", type=float, default=0.999)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=["f32", "f64"], default="f64")
    p.add_argument("--loss", choices=["l1", "l2"], default="l1")
    p.add_argument("--sigma-min", type=float, default=0.01)
    p.add_argument("--sigma-max", type=float, default=20.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_run_train)


def _sample_field_shape(ds: Dataset) -> tuple:
    shape = ds.inputs.shape[1:]
    return (1,) + shape if len(shape) >= 2 else tuple(shape)


def _run_train(args) -> int:
    _require_file(args.data, "training dataset")
    ds = Dataset.load(args.data)
    if ds.normalization is None:
        ds.compute_normalization()
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr,
                      lr_schedule=args.lr_schedule, weight_decay=args.weight_decay,
                      ema_decay=args.ema_decay, seed=args.seed, precision=args.precision,
                      loss=args.loss)
    field = _sample_field_shape(ds)
    if args.target == "regressor":
        spec = ModelSpec(arch=args.arch, in_shape=field, out_shape=field,
                         hidden=_parse_hidden(args.hidden), activation=args.activation)
        ckpt = train_regressor(spec, ds, cfg)
    else:
        joint = ds.joint()
        shape = (2,) + field[1:] if len(field) >= 2 else (2,)
        spec = ModelSpec(arch=args.arch, in_shape=shape, out_shape=shape,
                         hidden=_parse_hidden(args.hidden), activation=args.activation, cond=True)
        schedule = NoiseSchedule(sigma_min=args.sigma_min, sigma_max=args.sigma_max)
        ckpt = train_denoiser(spec, joint.reshape((len(ds),) + shape), cfg,
                              schedule=schedule, normalization=ds.normalization)
    ckpt.meta["provenance"] = _provenance(args, {"data": args.data})
    ckpt.save(args.out)
    curve = ckpt.meta["loss_curve"]
    print(f"trained {args.target}: loss {curve[0]:.4g} -> {curve[-1]:.4g}, saved {args.out}")
    return 0


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------

def _configure_certify(sub):
    p = sub.add_parser("certify", help="compute certificates for every sample of a dataset")
    p.add_argument("--regressor", required=True)
    p.add_argument("--denoiser", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dataset-tag", default="", help="tag stamped on report rows (default: dataset tag)")
    p.add_argument("--method", "--methods", dest="methods", default="jlbc",
                   help="comma-separated: jlbc,jdpath,jsfns,jsbddm,jmssm")
    p.add_argument("--solver", choices=["rk38", "rk45-fixed"], default="rk38")
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--divergence", choices=["hutchinson", "exact-dense"], default="hutchinson")
    p.add_argument("--probes", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-offset", type=int, default=0,
                   help="first sample id (keeps ids disjoint across datasets)")
    p.add_argument("--limit", type=int, default=0, help="certify only the first N samples (0 = all)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_run_certify)


def _load_normalized_pairs(data_path: str, regressor_path: str):
    """Test inputs/outputs normalized with the regressor's training stats."""
    ds = Dataset.load(data_path)
    reg = Checkpoint.load(regressor_path)
    norm = reg.meta.get("normalization")
    if norm is None:
        raise ConfigError(f"regressor {regressor_path} carries no normalization stats")
    ds.normalization = norm
    field = _sample_field_shape(ds)
    x = ds.normalized_inputs().reshape((len(ds),) + field)
    y = ds.normalized_outputs().reshape((len(ds),) + field)
    return ds, reg, x, y


def _certify_chunk(payload: dict) -> list[dict]:
    """Worker entry: certify a slice of sample indices (order-independent)."""
    ds, reg, x, y = _load_normalized_pairs(payload["data"], payload["regressor"])
    den_ckpt = Checkpoint.load(payload["denoiser"])
    den_norm = den_ckpt.meta.get("normalization")
    if den_norm is not None and den_norm != ds.normalization:
        raise ConfigError("denoiser and regressor were trained with different normalization stats")
    denoiser = denoiser_from_checkpoint(den_ckpt)
    cfg = SolverConfig(**payload["solver"])
    rows = []
    for i in payload["indices"]:
        records = certify_all(reg, denoiser, x[i], payload["methods"], cfg,
                              sample_id=payload["offset"] + i, dataset=payload["tag"],
                              y_true=y[i])
        rows.extend(r.to_row() for r in records)
    return rows


def _run_certify(args) -> int:
    for path, what in ((args.regressor, "regressor checkpoint"),
                       (args.denoiser, "denoiser checkpoint"), (args.data, "dataset")):
        _require_file(path, what)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    known = {"jlbc"} | {k.lower() for k in PRESETS}
    for m in methods:
        if m.lower() not in known:
            raise ConfigError(f"unknown certificate method {m!r}")
    ds = Dataset.load(args.data)
    n = len(ds) if args.limit == 0 else min(args.limit, len(ds))
    tag = args.dataset_tag or ds.tag
    payload = {
        "data": args.data, "regressor": args.regressor, "denoiser": args.denoiser,
        "methods": methods, "tag": tag, "offset": args.sample_offset,
        "solver": {"method": args.solver, "steps": args.steps, "divergence": args.divergence,
                   "probes": args.probes, "seed": args.seed},
    }
    workers = int(os.environ.get(WORKERS_ENV, "1"))
    indices = list(range(n))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        chunks = [indices[k::workers] for k in range(workers)]
        payloads = [dict(payload, indices=c) for c in chunks if c]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = [row for part in pool.map(_certify_chunk, payloads) for row in part]
    else:
        rows = _certify_chunk(dict(payload, indices=indices))
    rows.sort(key=lambda r: (r["sample_id"], r["method"]))
    from .likelihood import CertificateRecord
    records = [CertificateRecord.from_row(r) for r in rows]
    prov = _provenance(args, {"regressor": args.regressor, "denoiser": args.denoiser,
                              "data": args.data})
    write_report(args.out, Report(records=records, provenance=prov))
    print(f"certified {n} samples x {len(methods)} methods -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# boundary / classify / metrics / fit-error / report
# ---------------------------------------------------------------------------

def _configure_boundary(sub):
    p = sub.add_parser("boundary", help="derive decision boundaries from a decision-sample report")
    p.add_argument("--report", required=True, help="report over decision samples (training distribution)")
    p.add_argument("--alpha", type=float, default=1.5)
    p.add_argument("--beta", type=float, default=5.0, help="error percentile margin (beta=5 -> 95th)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_run_boundary)


def _run_boundary(args) -> int:
    _require_file(args.report, "decision report")
    report = read_report(args.report)
    by_method: dict[str, list] = {}
    for rec in report.records:
        by_method.setdefault(rec.method, []).append(rec)
    if not by_method:
        raise ConfigError("decision report contains no records")
    boundaries = {}
    for method, recs in sorted(by_method.items()):
        sign = METHOD_SIGNS.get(method, 1)
        certs = [r.certificate for r in recs]
        errors = [r.error for r in recs if r.error is not None]
        boundaries[method] = make_boundary(certs, errors or None, alpha=args.alpha,
                                           beta=args.beta if errors else None, sign=sign)
    payload = {
        "boundaries": {m: b.to_dict() for m, b in sorted(boundaries.items())},
        "provenance": _provenance(args, {"report": args.report}),
    }
    atomic_write_text(args.out, json.dumps(payload, sort_keys=True, indent=1) + "\n")
    print(f"boundaries for {sorted(boundaries)} -> {args.out}")
    return 0


def _load_boundaries(path: str) -> dict:
    from .decision import DecisionBoundary
    data = json.loads(_require_file(path, "boundary file").read_text())
    return {m: DecisionBoundary.from_dict(b) for m, b in data["boundaries"].items()}


def _configure_classify(sub):
    p = sub.add_parser("classify", help="attach ID/CD/OOD labels to report rows")
    p.add_argument("--report", required=True)
    p.add_argument("--boundary", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_run_classify)


def _run_classify(args) -> int:
    _require_file(args.report, "report")
    report = read_report(args.report)
    boundaries = _load_boundaries(args.boundary)
    for rec in report.records:
        if rec.method not in boundaries:
            raise ConfigError(f"no boundary for method {rec.method!r}")
        rec.label, rec.fine_label = classify_cert(rec.certificate, boundaries[rec.method])
    report.boundaries = boundaries
    report.provenance = _provenance(args, {"report": args.report, "boundary": args.boundary})
    write_report(args.out, report)
    print(f"classified {len(report.records)} rows -> {args.out}")
    return 0


def _configure_metrics(sub):
    p = sub.add_parser("metrics", help="quadrant metrics per (dataset, method)")
    p.add_argument("--report", required=True, help="report with ground-truth errors")
    p.add_argument("--boundary", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_run_metrics)


def _run_metrics(args) -> int:
    _require_file(args.report, "report")
    report = read_report(args.report)
    boundaries = _load_boundaries(args.boundary)
    groups: dict[tuple, list] = {}
    for rec in report.records:
        groups.setdefault((rec.dataset, rec.method), []).append(rec)
        groups.setdefault(("all", rec.method), []).append(rec)
    rows = []
    for (dataset, method), recs in sorted(groups.items()):
        if method not in boundaries:
            raise ConfigError(f"no boundary for method {method!r}")
        m = quadrant_metrics(recs, boundaries[method])
        m["dataset"] = dataset
        m["method"] = method
        rows.append(m)
    payload = {"metrics": rows,
               "provenance": _provenance(args, {"report": args.report, "boundary": args.boundary})}
    atomic_write_text(args.out, json.dumps(payload, sort_keys=True, indent=1) + "\n")
    csv_lines = ["dataset,method,ACC,FPR,FNR,FDR,ARCB,n"]
    for m in rows:
        arcb = "" if "ARCB" not in m else repr(m["ARCB"])
        csv_lines.append(f"{m['dataset']},{m['method']},{m['ACC']!r},{m['FPR']!r},"
                         f"{m['FNR']!r},{m['FDR']!r},{arcb},{m['n']}")
    atomic_write_text(Path(args.out).with_suffix(".csv"), "\n".join(csv_lines) + "\n")
    print(f"metrics for {len(rows)} groups -> {args.out}")
    return 0


def _configure_fit_error(sub):
    p = sub.add_parser("fit-error", help="fit the exponential error-vs-certificate curve")
    p.add_argument("--report", required=True, help="report with ground-truth errors")
    p.add_argument("--method", default="JLBC")
    p.add_argument("--percentile", type=float, default=75.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_run_fit_error)


def _run_fit_error(args) -> int:
    _require_file(args.report, "report")
    report = read_report(args.report)
    recs = [r for r in report.records if r.method == args.method and r.error is not None]
    if len(recs) < 8:
        raise ConfigError(f"need at least 8 records with errors for method {args.method!r}, got {len(recs)}")
    certs = np.array([r.certificate for r in recs])
    errors = np.array([r.error for r in recs])
    fit = fit_error_curve(certs, errors, percentile=args.percentile)
    predicted = fit.a * np.exp(-fit.b * certs) + fit.c
    coverage = float((np.abs(predicted - errors) <= fit.band).mean())
    payload = {
        "error_fit": fit.to_dict(),
        "coverage": coverage,
        "method": args.method,
        "n": len(recs),
        "provenance": _provenance(args, {"report": args.report}),
    }
    atomic_write_text(args.out, json.dumps(payload, sort_keys=True, indent=1) + "\n")
    print(f"fit a={fit.a:.4g} b={fit.b:.4g} c={fit.c:.4g} band={fit.band:.4g} "
          f"coverage={coverage:.3f} -> {args.out}")
    return 0


def _configure_report(sub):
    p = sub.add_parser("report", help="merge records, boundaries, metrics, and fit into one report")
    p.add_argument("--records", required=True, help="classified report JSON")
    p.add_argument("--boundary", default="")
    p.add_argument("--metrics", default="")
    p.add_argument("--fit", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_run_report)


def _run_report(args) -> int:
    _require_file(args.records, "records report")
    report = read_report(args.records)
    if args.boundary:
        report.boundaries = _load_boundaries(args.boundary)
    if args.metrics:
        report.metrics = json.loads(_require_file(args.metrics, "metrics file").read_text())["metrics"]
    if args.fit:
        from .decision import ErrorFit
        fit_payload = json.loads(_require_file(args.fit, "fit file").read_text())
        report.error_fit = ErrorFit.from_dict(fit_payload["error_fit"])
    report.provenance = _provenance(args, {"records": args.records, "boundary": args.boundary,
                                           "metrics": args.metrics, "fit": args.fit})
    write_report(args.out, report)
    print(f"report with {len(report.records)} rows -> {args.out}")
    return 0


def _configure_methods(sub):
    p = sub.add_parser("methods", help="list certificate methods and their toggles")
    p.set_defaults(func=_run_methods)


def _run_methods(args) -> int:
    print("method   alpha beta gamma  orientation")
    print("JLBC     -     -    -      low value = OOD (joint log-likelihood)")
    for tag in sorted(PRESETS):
        a, b, g = PRESETS[tag]
        print(f"{tag:<8} {a:<5} {b:<4} {g:<6} high value = OOD")
    return 0


# ---------------------------------------------------------------------------
# parser / dispatch
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oodcert",
                                     description="task-aware OOD certificates for regression models")
    parser.add_argument("--config", default="", help="TOML file with flat key = value defaults")
    sub = parser.add_subparsers(dest="command", required=True)
    for configure in (_configure_gen, _configure_train, _configure_certify, _configure_boundary,
                      _configure_classify, _configure_metrics, _configure_fit_error,
                      _configure_report, _configure_methods):
        configure(sub)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Load --config TOML as subcommand defaults; explicit flags still win."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default="")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return argv
    path = _require_file(known.config, "config file")
    try:
        config = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    # locate the subcommand parser to validate keys against its options
    positional = [a for a in argv if not a.startswith("-") and a != known.config]
    if not positional:
        raise ConfigError("--config requires a subcommand")
    sub_actions = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sub_parser = sub_actions.choices.get(positional[0])
    if sub_parser is None:
        raise ConfigError(f"unknown subcommand {positional[0]!r}")
    valid = {a.dest for a in sub_parser._actions}
    defaults = {}
    for key, value in config.items():
        dest = key.replace("-", "_")
        if dest not in valid:
            raise ConfigError(f"unknown config key {key!r} for subcommand {positional[0]!r}")
        defaults[dest] = value
    sub_parser.set_defaults(**defaults)
    return argv


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _apply_config(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return 2 if exc.code else 0
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalOverflowError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
