"""Command-line front end tying generation, identification, evaluation,
closed-loop analysis and certification into reproducible runs.

Every command is deterministic given (flags, files, seed); reports embed the
resolved configuration. Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical or infeasibility error.
"""

from __future__ import annotations

import os
import sys


def _apply_thread_cap() -> None:
    # Must run before numpy first loads a BLAS, hence the early placement.
    raw = os.environ.get("ALSSNN_THREADS")
    if raw is None:
        return
    try:
        cap = int(raw)
    except ValueError:
        return  # reported as a usage error in main()
    if cap >= 1:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
            os.environ[var] = str(cap)


_apply_thread_cap()

import argparse
import json
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks import (PreyPredatorParams, SinusoidalForcing, WhInputSpec,
                         default_wh_params, generate_wh, pp_params_to_dict,
                         simulate_prey_predator, wh_params_to_dict)
from .control import (
    estimate_epsilon,
    ratio_stats,
    rmse,
    rmse_split,
    simulate_closed_loop,
)
from .dataio import SplitSpec, load_csv, normalize, save_csv, split
from .errors import DataError, NumericalError
from .linear_id import LinearSS, default_horizon, linear_init
from .models import AlSsnnModel, GrSsnnModel, load_model, save_model
from .stability import (certificate_to_json_dict, check_convergence,
                        solve_certificate, verify)
from .training import TrainConfig, report_to_json_dict, train, train_gr

__all__ = ["main", "build_parser"]


class _UsageError(Exception):
    def __init__(self, message: str, parser: argparse.ArgumentParser):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage problems as exit code 1."""

    def error(self, message):
        raise _UsageError(message, self)


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, bool):
        return str(x)
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _print_table(rows, header=("metric", "value")) -> None:
    names = [header[0]] + [str(k) for k, _ in rows]
    width = max(len(s) for s in names)
    print(f"{header[0]:<{width}}  {header[1]}")
    print("-" * (width + 2 + len(header[1])))
    for k, v in rows:
        print(f"{k:<{width}}  {_fmt(v)}")


def _ensure_parent(path) -> None:
    parent = Path(path).parent
    if parent and not parent.exists():
        parent.mkdir(parents=True, exist_ok=True)


def _write_json(path, obj) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _meta_path(out: str) -> Path:
    return Path(out).with_suffix(".meta.json")


def _family_name(model) -> str:
    if isinstance(model, AlSsnnModel):
        return "al-ssnn"
    if isinstance(model, GrSsnnModel):
        return "gr-ssnn"
    if isinstance(model, LinearSS):
        return "lti"
    raise DataError(f"unrecognized model type {type(model).__name__}")


def _require_al(model, what: str) -> AlSsnnModel:
    if not isinstance(model, AlSsnnModel):
        raise DataError(
            f"{what} requires an al-ssnn model (output-feedback form); "
            f"got family '{_family_name(model)}'"
        )
    return model


def _train_part(ds, train_frac: float):
    if not (0.0 < train_frac <= 1.0):
        raise DataError(f"train fraction must lie in (0, 1], got {train_frac}")
    if train_frac >= 1.0:
        return ds
    head, _ = split(ds, SplitSpec(train_frac))
    return head


def _parse_gammas(text: str) -> list[float]:
    try:
        vals = [float(s) for s in text.split(",") if s.strip() != ""]
    except ValueError:
        raise DataError(f"--gamma expects a number or comma list, got {text!r}")
    if not vals:
        raise DataError(f"--gamma expects at least one value, got {text!r}")
    return vals


# ---------------------------------------------------------------- gen-data


def cmd_gen_data(args) -> int:
    if args.generator == "prey-predator":
        params = PreyPredatorParams() if args.dt is None else PreyPredatorParams(dt=args.dt)
        forcing = SinusoidalForcing()
        ds = simulate_prey_predator(params, forcing, args.n, seed=args.seed)
        source = pp_params_to_dict(params, forcing)
    else:
        params = default_wh_params(noise_std=args.noise_std)
        input_spec = WhInputSpec(std=args.input_std)
        ds = generate_wh(params, input_spec, args.n, seed=args.seed)
        source = wh_params_to_dict(params, input_spec)
    _ensure_parent(args.out)
    meta = {
        "generator": args.generator,
        "n_samples": args.n,
        "seed": args.seed,
        "dt": ds.dt,
        "normalized": bool(args.normalize),
        "source": source,
    }
    if args.normalize:
        ds, norm = normalize(ds)
        meta["normalization"] = norm
    save_csv(ds, args.out)
    _write_json(_meta_path(args.out), meta)
    print(f"wrote {args.out} and {_meta_path(args.out)} "
          f"(N={ds.n_samples}, m={ds.n_inputs}, p={ds.n_outputs})")
    return 0


# ---------------------------------------------------------------- identify


def _lti_identify(args, ds_train) -> int:
    horizon = args.horizon if args.horizon is not None else default_horizon(args.order)
    lin = linear_init(ds_train, args.order, horizon=horizon)
    save_model(lin, str(args.out) + ".model.json")
    report = {
        "command": "identify",
        "family": "lti",
        "data": args.data,
        "train_fraction": args.train_frac,
        "config": {"order": args.order, "horizon": horizon},
        "dims": {"n": lin.n_states, "m": lin.n_inputs, "p": lin.n_outputs},
        "rmse_train": rmse(lin, ds_train),
        "spectral_radius": lin.spectral_radius(),
    }
    _write_json(str(args.out) + ".report.json", report)
    print(f"lti: n={args.order} rmse_train={_fmt(report['rmse_train'])} "
          f"rho(A)={_fmt(report['spectral_radius'])}")
    print(f"wrote {args.out}.model.json and {args.out}.report.json")
    return 0


def _make_train_config(args, gamma: float) -> TrainConfig:
    return TrainConfig(
        gamma=gamma,
        max_iters=args.iters,
        n_h=args.nh,
        n_g=args.ng,
        seed=args.seed,
        horizon=args.horizon,
    )


def cmd_identify(args) -> int:
    ds_full = load_csv(args.data)
    ds_train = _train_part(ds_full, args.train_frac)
    Path(str(args.out)).parent.mkdir(parents=True, exist_ok=True)

    if args.family == "lti":
        return _lti_identify(args, ds_train)

    if args.family == "gr-ssnn":
        config = _make_train_config(args, gamma=0.0)
        model, rep = train_gr(ds_train, args.order, args.nf, config)
        stats = ratio_stats(model, ds_train)
        save_model(model, str(args.out) + ".model.json")
        _write_json(str(args.out) + ".report.json", {
            "command": "identify",
            "family": "gr-ssnn",
            "data": args.data,
            "train_fraction": args.train_frac,
            "report": report_to_json_dict(rep, include_timing=args.record_timing),
            "train_ratios": stats.as_dict(),
        })
        print(f"gr-ssnn: rmse_train={_fmt(rep.rmse_train)} "
              f"f_ratio_mean={_fmt(stats.f_mean)} stop={rep.stop_reason} "
              f"iters={rep.n_iterations}")
        print(f"wrote {args.out}.model.json and {args.out}.report.json")
        return 0

    gammas = _parse_gammas(args.gamma)
    sweep_rows = []
    for gamma in gammas:
        config = _make_train_config(args, gamma=gamma)
        model, rep = train(ds_train, args.order, config)
        stats = ratio_stats(model, ds_train)
        suffix = f".gamma-{gamma:g}" if len(gammas) > 1 else ""
        save_model(model, str(args.out) + suffix + ".model.json")
        _write_json(str(args.out) + suffix + ".report.json", {
            "command": "identify",
            "family": "al-ssnn",
            "data": args.data,
            "train_fraction": args.train_frac,
            "report": report_to_json_dict(rep, include_timing=args.record_timing),
            "train_ratios": stats.as_dict(),
        })
        sweep_rows.append({
            "gamma": gamma,
            "rmse_train": rep.rmse_train,
            "g_ratio_mean": stats.g_mean,
            "g_ratio_max": stats.g_max,
            "h_ratio_mean": stats.h_mean,
            "stop_reason": rep.stop_reason,
            "n_iterations": rep.n_iterations,
        })
        print(f"al-ssnn gamma={gamma:g}: rmse_train={_fmt(rep.rmse_train)} "
              f"g_ratio_mean={_fmt(stats.g_mean)} stop={rep.stop_reason} "
              f"iters={rep.n_iterations}")
    if len(gammas) > 1:
        _write_json(str(args.out) + ".sweep.json", {
            "command": "identify-sweep",
            "family": "al-ssnn",
            "data": args.data,
            "train_fraction": args.train_frac,
            "gammas": gammas,
            "entries": sweep_rows,
        })
        header = f"{'gamma':>10}  {'rmse_train':>12}  {'g_ratio_mean':>12}  {'g_ratio_max':>12}"
        print(header)
        print("-" * len(header))
        for row in sweep_rows:
            print(f"{row['gamma']:>10g}  {row['rmse_train']:>12.6g}  "
                  f"{row['g_ratio_mean']:>12.6g}  {row['g_ratio_max']:>12.6g}")
        print(f"wrote per-gamma model/report files and {args.out}.sweep.json")
    else:
        print(f"wrote {args.out}.model.json and {args.out}.report.json")
    return 0


# ---------------------------------------------------------------- evaluate


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    ds = load_csv(args.data)
    result = {
        "command": "evaluate",
        "model": args.model,
        "data": args.data,
        "family": _family_name(model),
    }
    if args.split is not None:
        _, ds_test = split(ds, SplitSpec(args.split))
        result["split"] = args.split
        result["rmse_train"], result["rmse_test"] = rmse_split(model, ds, args.split)
        ratio_ds, partition = ds_test, "test"
    else:
        result["rmse"] = rmse(model, ds)
        ratio_ds, partition = ds, "all"
    if isinstance(model, (AlSsnnModel, GrSsnnModel)):
        stats = ratio_stats(model, ratio_ds)
        result["ratios"] = {"partition": partition, **stats.as_dict()}

    _ensure_parent(str(args.out) + ".json")
    rows = [(k, result[k]) for k in ("rmse", "rmse_train", "rmse_test") if k in result]
    if "ratios" in result:
        for k, v in result["ratios"].items():
            if v is not None and k != "partition":
                rows.append((f"{k} ({partition})", v))
    _write_json(str(args.out) + ".json", result)
    with open(str(args.out) + ".csv", "w", encoding="utf-8") as fh:
        fh.write("metric,value\n")
        for k, v in rows:
            fh.write(f"{k.split(' ')[0]},{v!r}\n")
    _print_table(rows)
    print(f"wrote {args.out}.json and {args.out}.csv")
    return 0


# ---------------------------------------------------------------- closedloop


def cmd_closedloop(args) -> int:
    model = _require_al(load_model(args.model), "closed-loop analysis")
    ds = load_csv(args.data)
    if ds.n_inputs != model.dims["m"]:
        raise DataError(
            f"dataset has {ds.n_inputs} input channels, model expects {model.dims['m']}"
        )
    _ensure_parent(str(args.out) + ".json")
    record = simulate_closed_loop(model, ds.u)
    epsilon = estimate_epsilon(model, [ds], records=[record])
    summary = {
        "command": "closedloop",
        "model": args.model,
        "data": args.data,
        "n_steps": record.n_steps,
        "diverged": record.diverged,
        "diverged_at": record.diverged_at,
        "omega_ratio_mean": record.omega_ratio_mean,
        "omega_ratio_max": record.omega_ratio_max,
        "n_excluded": record.n_excluded,
        "max_omega_norm": record.max_omega_norm,
        "max_lin_norm": float(np.max(record.lin_norm)) if record.n_steps else 0.0,
        "epsilon": epsilon,
    }
    _write_json(str(args.out) + ".json", summary)
    omega_norm = np.linalg.norm(record.omega, axis=1)
    m, p = record.v.shape[1], record.y.shape[1]
    with open(str(args.out) + ".csv", "w", encoding="utf-8") as fh:
        cols = (["t"] + [f"v{i + 1}" for i in range(m)] + [f"y{i + 1}" for i in range(p)]
                + ["lin_norm", "omega_norm"])
        fh.write(",".join(cols) + "\n")
        for k in range(record.n_steps):
            vals = ([k * ds.dt] + list(record.v[k]) + list(record.y[k])
                    + [record.lin_norm[k], omega_norm[k]])
            fh.write(",".join(f"{v:.17g}" for v in vals) + "\n")
    rows = [(k, v) for k, v in summary.items() if k not in ("command", "model", "data")]
    _print_table(rows)
    print(f"wrote {args.out}.json and {args.out}.csv")
    return 0


# ---------------------------------------------------------------- certify


def cmd_certify(args) -> int:
    model = _require_al(load_model(args.model), "certification")
    datasets = [load_csv(p) for p in args.data]
    driven = simulate_closed_loop(model, datasets[0].u)
    # The certificate's decrement statement is about the regulation loop
    # (v = 0), so convergence is checked on a v = 0 run started from the
    # farthest state the driven loop visited.
    x_far = driven.x[np.argmax(np.linalg.norm(driven.x, axis=1))]
    v_zero = np.zeros((datasets[0].n_samples, model.dims["m"]))
    regulation = simulate_closed_loop(model, v_zero, x0=x_far)
    if args.epsilon is not None:
        if args.epsilon < 0:
            raise DataError(f"--epsilon must be non-negative, got {args.epsilon}")
        epsilon, eps_source = args.epsilon, "override"
    else:
        epsilon = estimate_epsilon(model, datasets, records=[driven, regulation])
        eps_source = "estimated"
    cert = solve_certificate(model.lin.A, epsilon)
    ok, diag = verify(cert, model.lin.A)
    conv = check_convergence(cert, regulation)
    cert_obj = certificate_to_json_dict(cert)
    cert_obj.update({
        "model": args.model,
        "data": list(args.data),
        "epsilon_source": eps_source,
        "verified": ok,
        "p_min_eig": diag["p_min_eig"],
    })
    _write_json(str(args.out) + ".certificate.json", cert_obj)
    _write_json(str(args.out) + ".check.json", {
        "command": "certify",
        "model": args.model,
        "data": list(args.data),
        **conv,
    })
    rows = [
        ("spectral_radius(A)", float(np.max(np.abs(np.linalg.eigvals(model.lin.A))))),
        ("epsilon", epsilon),
        ("phi", cert.phi),
        ("psi", cert.psi),
        ("radius", cert.radius),
        ("lmi_max_eig", cert.lmi_max_eig),
        ("p_min_eig", diag["p_min_eig"]),
        ("first_entry", conv["first_entry"]),
        ("fraction_inside_after_entry", conv["fraction_inside_after_entry"]),
        ("decrement_holds", conv["decrement_holds"]),
    ]
    _print_table(rows)
    print(f"wrote {args.out}.certificate.json and {args.out}.check.json")
    return 0


# ---------------------------------------------------------------- run


def cmd_run(args) -> int:
    try:
        with open(args.pipeline, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read pipeline file: {exc}")
    except json.JSONDecodeError as exc:
        raise DataError(f"pipeline file is not valid JSON: {exc}")
    steps = obj.get("steps") if isinstance(obj, dict) else None
    if (not isinstance(steps, list) or not steps
            or not all(isinstance(s, list) and s
                       and all(isinstance(a, str) for a in s) for s in steps)):
        raise DataError(
            'pipeline must be {"steps": [["gen-data", ...], ["identify", ...], ...]}'
        )
    for i, step in enumerate(steps, start=1):
        print(f"[{i}/{len(steps)}] alssnn {' '.join(step)}")
        rc = main(step)
        if rc != 0:
            print(f"pipeline step {i} failed with exit code {rc}", file=sys.stderr)
            return rc
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="alssnn",
        description="Identify feedback-linearizable neural state-space models, "
                    "analyze the linearizing loop, and certify ISS bounds.",
    )
    parser.add_argument("--version", action="version", version=f"alssnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a benchmark dataset (CSV + meta JSON)")
    p.add_argument("generator", choices=["prey-predator", "wh-synthetic"])
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=None,
                   help="prey-predator integration step (default 0.5)")
    p.add_argument("--normalize", action="store_true",
                   help="rescale u and y channels to zero mean, unit std")
    p.add_argument("--noise-std", type=float, default=0.0,
                   help="wh-synthetic additive output noise std")
    p.add_argument("--input-std", type=float, default=1.0,
                   help="wh-synthetic excitation std")
    p.add_argument("-o", "--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("identify", help="fit a model family to a dataset")
    p.add_argument("family", choices=["lti", "gr-ssnn", "al-ssnn"])
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--order", type=int, required=True, help="state dimension n")
    p.add_argument("--nh", type=int, default=10, help="hidden units of the output-feedback net")
    p.add_argument("--ng", type=int, default=10, help="hidden units of the residual net")
    p.add_argument("--nf", type=int, default=10, help="hidden units of the gr-ssnn net")
    p.add_argument("--gamma", default="1.0",
                   help="al-ssnn penalty weight; a comma list runs a sweep")
    p.add_argument("--iters", type=int, default=300, help="max accepted+rejected iterations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-frac", type=float, default=0.5,
                   help="leading fraction used for training (1 = use all)")
    p.add_argument("--horizon", type=int, default=None,
                   help="impulse-fit window of the linear initializer")
    p.add_argument("--record-timing", action="store_true",
                   help="include wall time in reports (breaks byte determinism)")
    p.add_argument("-o", "--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("evaluate", help="free-run RMSE and residual-ratio report")
    p.add_argument("--model", required=True, help="model JSON")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--split", type=float, default=None,
                   help="train fraction; one full free run scored per half, "
                        "the test half as a continuation")
    p.add_argument("-o", "--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("closedloop",
                       help="simulate the output-feedback linearizing loop")
    p.add_argument("--model", required=True, help="al-ssnn model JSON")
    p.add_argument("--data", required=True, help="dataset CSV providing v")
    p.add_argument("-o", "--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_closedloop)

    p = sub.add_parser("certify", help="solve the ISS certificate and check a run")
    p.add_argument("--model", required=True, help="al-ssnn model JSON")
    p.add_argument("--data", required=True, nargs="+",
                   help="dataset CSVs used to estimate the disturbance bound")
    p.add_argument("--epsilon", type=float, default=None,
                   help="override the estimated disturbance bound")
    p.add_argument("-o", "--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("run", help="replay a JSON pipeline of subcommands")
    p.add_argument("pipeline", help='JSON file: {"steps": [[subcommand, arg, ...], ...]}')
    p.set_defaults(func=cmd_run)

    return parser


def _threads_env_error() -> str | None:
    raw = os.environ.get("ALSSNN_THREADS")
    if raw is None:
        return None
    try:
        if int(raw) >= 1:
            return None
    except ValueError:
        pass
    return f"ALSSNN_THREADS must be a positive integer, got {raw!r}"


def main(argv=None) -> int:
    msg = _threads_env_error()
    if msg is not None:
        print(f"error: {msg}", file=sys.stderr)
        return 1
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        exc.parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return int(args.func(args))
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for key, val in getattr(exc, "diagnostics", {}).items():
            print(f"  {key}: {val}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
