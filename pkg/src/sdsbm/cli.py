"""Command-line front end: simulate, fit, forecast, detect.

Every subcommand is reproducible from its inputs, options and seed; the
resolved configuration is written next to the outputs.  Exit codes:
0 success (detect: no anomalies), 1 usage error, 2 data error,
3 anomalies found (detect), 4 EM hit max-iter without converging (fit).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import anomaly
from .em import EmConfig, default_init, em_fit
from .generator import GenParams, generate_network, seasonal_state, sine_profile
from .graph_model import BlockSeries, VertexTyping, extract_block_series
from .ingest import (
    BucketingConfig,
    EMPTY_GRAPH,
    IngestError,
    MISSING_OBSERVATION,
    ModelFormatError,
    bucketize,
    load_model,
    parse_inputs,
    save_model,
)
from .kalman import GaussianBelief, filter as kalman_filter, forecast as kalman_forecast

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ANOMALIES = 3
EXIT_MAX_ITER = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 instead of argparse's 2
        raise UsageError(f"{self.prog}: {message}")


def _fmt(x) -> str:
    return repr(float(x))


def _pair_key(pair) -> str:
    return f"{pair[0]}:{pair[1]}"


def _z_quantile(level: float) -> float:
    """Two-sided Gaussian quantile via bisection on the error function."""
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must be in (0, 1)")
    target = 0.5 * (1.0 + level)
    lo, hi = 0.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return cfg


def _resolve(defaults: dict, config: dict, cli: dict) -> dict:
    unknown = set(config) - set(defaults) - {"blocks"}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    resolved = dict(defaults)
    resolved.update({k: v for k, v in config.items() if k != "blocks"})
    resolved.update({k: v for k, v in cli.items() if v is not None})
    if "blocks" in config:
        resolved["blocks"] = config["blocks"]
    return resolved


def _write_run_config(out_dir: Path, command: str, resolved: dict) -> None:
    payload = {"command": command, **resolved}
    with open(out_dir / "run_config.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(resolved: dict) -> Path:
    out = Path(resolved["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_type_sizes(spec: str) -> dict[str, int]:
    sizes: dict[str, int] = {}
    for part in spec.split(","):
        if "=" not in part:
            raise UsageError(f"bad type spec {part!r}, expected name=count")
        name, count = part.split("=", 1)
        name = name.strip()
        if name in sizes:
            raise UsageError(f"type {name!r} given twice")
        try:
            sizes[name] = int(count)
        except ValueError:
            raise UsageError(f"bad vertex count {count!r} for type {name!r}") from None
        if not name or sizes[name] < 1:
            raise UsageError(f"type {name!r} needs a positive vertex count")
    return sizes


# ----------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------

SIMULATE_DEFAULTS = {
    "seed": 0,
    "period": 7,
    "steps": 280,
    "types": "a=32,b=16",
    "bias": 0.6,
    "season_amplitude": 0.1,
    "q_m": 1e-7,
    "q_s": 1e-7,
    "r": 1e-3,
    "width": 1.0,
    "out_dir": ".",
}


def cmd_simulate(resolved: dict) -> int:
    d = int(resolved["period"])
    T = int(resolved["steps"])
    if T < 0:
        raise ValueError("steps must be >= 0")
    sizes = _parse_type_sizes(resolved["types"])
    vertex_ids: list[str] = []
    type_of: dict[str, str] = {}
    for name in sorted(sizes):
        for i in range(sizes[name]):
            vid = f"{name}{i}"
            vertex_ids.append(vid)
            type_of[vid] = name
    typing = VertexTyping(vertex_ids=tuple(vertex_ids), type_of=type_of)

    overrides = resolved.get("blocks", {})
    block_params = {}
    for pair in typing.pairs():
        opts = dict(
            bias=resolved["bias"],
            season_amplitude=resolved["season_amplitude"],
            q_m=resolved["q_m"],
            q_s=resolved["q_s"],
            r=resolved["r"],
        )
        opts.update(overrides.get(_pair_key(pair), {}))
        init = seasonal_state(d, opts["bias"], sine_profile(d, opts["season_amplitude"]))
        block_params[pair] = GenParams(
            d=d, q_m=opts["q_m"], q_s=opts["q_s"], r=opts["r"], init=init
        )

    rng = np.random.default_rng(int(resolved["seed"]))
    network, traces = generate_network(block_params, typing, T, rng)

    out = _out_dir(resolved)
    width = float(resolved["width"])
    index = typing.vertex_index()
    with open(out / "events.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "src", "dst"])
        for t, snap in enumerate(network.snapshots, start=1):
            ts = (t - 0.5) * width
            for u, v in sorted(snap, key=lambda e: (index[e[0]], index[e[1]])):
                w.writerow([_fmt(ts), u, v])
    with open(out / "types.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vertex", "type"])
        for v in typing.vertex_ids:
            w.writerow([v, typing.type_of[v]])
    with open(out / "ground_truth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "block", "m", "s", "e", "w"])
        for t in range(1, T + 1):
            for pair in typing.pairs():
                if pair not in traces:
                    continue
                tr = traces[pair]
                w.writerow(
                    [
                        t,
                        _pair_key(pair),
                        _fmt(tr.states[t - 1, 0]),
                        _fmt(tr.states[t - 1, 1]),
                        _fmt(tr.density[t - 1]),
                        int(tr.counts[t - 1]),
                    ]
                )
    _write_run_config(out, "simulate", resolved)
    return EXIT_OK


# ----------------------------------------------------------------------
# fit
# ----------------------------------------------------------------------

FIT_DEFAULTS = {
    "seed": 0,
    "period": 7,
    "events": None,
    "types": None,
    "origin": 0.0,
    "width": 1.0,
    "t_cap": None,
    "missing_policy": EMPTY_GRAPH,
    "max_iter": 200,
    "tol": 1e-6,
    "fix_r_zero": False,
    "paper_default_init": False,
    "init_model": None,
    "out_dir": ".",
}


def _load_blocks(resolved: dict) -> list[BlockSeries]:
    if not resolved["events"] or not resolved["types"]:
        raise UsageError("--events and --types are required")
    events, typing = parse_inputs(resolved["events"], resolved["types"])
    config = BucketingConfig(
        origin=float(resolved["origin"]),
        width=float(resolved["width"]),
        T=None if resolved["t_cap"] is None else int(resolved["t_cap"]),
        missing_policy=resolved["missing_policy"],
    )
    network = bucketize(events, typing, config)
    if network.T == 0:
        raise IngestError("no time buckets: empty event file and no bucket cap")
    return extract_block_series(network)


def cmd_fit(resolved: dict) -> int:
    d = int(resolved["period"])
    blocks = _load_blocks(resolved)
    em_config = EmConfig(
        max_iter=int(resolved["max_iter"]),
        tol=float(resolved["tol"]),
        fix_r_to_zero=bool(resolved["fix_r_zero"]),
    )
    warm_start = {}
    if resolved["init_model"]:
        warm_start, _ = load_model(resolved["init_model"])
    fitted = {}
    n_by_pair = {}
    trace_rows = []
    all_converged = True
    for series in blocks:
        if series.n < 1:
            continue
        init = warm_start.get(series.pair) or default_init(
            series, d, flat_defaults=bool(resolved["paper_default_init"])
        )
        if init.d != d:
            raise IngestError(
                f"init model period {init.d} does not match --period {d}"
            )
        params, trace = em_fit(series, init, em_config)
        fitted[series.pair] = params
        n_by_pair[series.pair] = series.n
        all_converged &= trace.converged
        for i, (ll, p) in enumerate(
            zip(trace.loglik_per_iter, trace.params_per_iter), start=1
        ):
            trace_rows.append([_pair_key(series.pair), i, _fmt(ll), _fmt(p.q_m), _fmt(p.q_s), _fmt(p.r)])
    if not fitted:
        raise IngestError("no blocks with possible edges to fit")
    out = _out_dir(resolved)
    save_model(fitted, n_by_pair, out / "model.json")
    with open(out / "em_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "iter", "loglik", "q_m", "q_s", "r"])
        w.writerows(trace_rows)
    _write_run_config(out, "fit", resolved)
    return EXIT_OK if all_converged else EXIT_MAX_ITER


# ----------------------------------------------------------------------
# forecast
# ----------------------------------------------------------------------

FORECAST_DEFAULTS = {
    "seed": 0,
    "period": None,
    "model": None,
    "events": None,
    "types": None,
    "origin": 0.0,
    "width": 1.0,
    "t_cap": None,
    "missing_policy": EMPTY_GRAPH,
    "horizon": None,
    "level": 0.95,
    "out_dir": ".",
}


def _matched_blocks(resolved: dict):
    if not resolved["model"]:
        raise UsageError("--model is required")
    params, n_by_pair = load_model(resolved["model"])
    model_d = next(iter(params.values())).d
    if resolved.get("period") is not None and int(resolved["period"]) != model_d:
        raise IngestError(
            f"--period {resolved['period']} contradicts the model's period {model_d}"
        )
    blocks = {b.pair: b for b in _load_blocks(resolved)}
    matched = []
    for pair in sorted(params):
        if pair not in blocks or blocks[pair].n != n_by_pair[pair]:
            raise IngestError(
                f"typing mismatch: model block {_pair_key(pair)} (n={n_by_pair[pair]}) "
                "does not match the data"
            )
        matched.append(blocks[pair])
    return params, matched


def cmd_forecast(resolved: dict) -> int:
    if resolved["horizon"] is None:
        raise UsageError("--horizon is required")
    horizon = int(resolved["horizon"])
    if horizon < 1:
        raise UsageError("forecast horizon must be >= 1")
    z = _z_quantile(float(resolved["level"]))
    params, blocks = _matched_blocks(resolved)
    out = _out_dir(resolved)
    with open(out / "forecast.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "block", "mean", "variance", "lower", "upper"])
        for series in blocks:
            p = params[series.pair]
            ss = p.state_space(series.n)
            seq = kalman_filter(series, p)
            if seq.T:
                last = seq.filtered(seq.T)
            else:
                last = GaussianBelief(p.mu0.copy(), p.Sigma0.copy())
            fc = kalman_forecast(last, ss, horizon)
            for k in range(horizon):
                mean = fc.count_mean[k]
                var = fc.total_var[k]
                half = z * math.sqrt(var)
                w.writerow(
                    [
                        series.T + k + 1,
                        _pair_key(series.pair),
                        _fmt(mean),
                        _fmt(var),
                        _fmt(mean - half),
                        _fmt(mean + half),
                    ]
                )
    _write_run_config(out, "forecast", resolved)
    return EXIT_OK


# ----------------------------------------------------------------------
# detect
# ----------------------------------------------------------------------

DETECT_DEFAULTS = {
    "seed": 0,
    "period": None,
    "model": None,
    "events": None,
    "types": None,
    "origin": 0.0,
    "width": 1.0,
    "t_cap": None,
    "missing_policy": EMPTY_GRAPH,
    "sigma": None,
    "loglik_threshold": None,
    "mode": "predictive",
    "drill_down": False,
    "out_dir": ".",
}


def cmd_detect(resolved: dict) -> int:
    if resolved["sigma"] is not None and resolved["loglik_threshold"] is not None:
        raise UsageError("--sigma and --loglik-threshold are mutually exclusive")
    if resolved["loglik_threshold"] is not None:
        policy = anomaly.LogLikPolicy(c0=float(resolved["loglik_threshold"]))
    else:
        policy = anomaly.threshold_sigma(
            3.0 if resolved["sigma"] is None else float(resolved["sigma"])
        )
    params, blocks = _matched_blocks(resolved)
    scores = anomaly.score(blocks, params, mode=resolved["mode"])
    report = anomaly.detect(scores, policy, drill_down=bool(resolved["drill_down"]))
    out = _out_dir(resolved)
    anomaly.write_scores_csv(scores, report, out / "scores.csv")
    anomaly.write_report_json(report, out / "report.json")
    _write_run_config(out, "detect", resolved)
    return EXIT_ANOMALIES if report.graph_flags else EXIT_OK


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------


def _add_shared(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, help="run seed, recorded in the output")
    sub.add_argument("--period", "-d", type=int, help="seasonal period length d")
    sub.add_argument("--config", help="JSON file with defaults for any option")
    sub.add_argument("--out-dir", help="directory for output files")


def _add_data_opts(sub: argparse.ArgumentParser, with_model: bool) -> None:
    if with_model:
        sub.add_argument("--model", help="fitted model JSON")
    sub.add_argument("--events", help="events CSV (timestamp,src,dst)")
    sub.add_argument("--types", help="vertex types CSV (vertex,type)")
    sub.add_argument("--origin", type=float, help="bucketing origin timestamp")
    sub.add_argument("--width", type=float, help="bucket width")
    sub.add_argument("--t-cap", type=int, help="cap on the number of buckets")
    sub.add_argument(
        "--missing-policy",
        choices=[EMPTY_GRAPH, MISSING_OBSERVATION],
        help="treat event-free buckets as empty graphs or as gaps",
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="sdsbm", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="sample a synthetic seasonal network")
    _add_shared(sim)
    sim.add_argument("--steps", "-T", type=int, help="number of snapshots")
    sim.add_argument("--types", help="type sizes, e.g. a=32,b=16")
    sim.add_argument("--bias", type=float, help="initial edge-density bias")
    sim.add_argument("--season-amplitude", type=float, help="seasonal half-range")
    sim.add_argument("--q-m", type=float, help="bias process variance")
    sim.add_argument("--q-s", type=float, help="seasonal process variance")
    sim.add_argument("--r", type=float, help="measurement variance")
    sim.add_argument("--width", type=float, help="timestamp width per snapshot")

    fit = subs.add_parser("fit", help="learn per-block parameters by EM")
    _add_shared(fit)
    _add_data_opts(fit, with_model=False)
    fit.add_argument("--max-iter", type=int, help="EM iteration cap")
    fit.add_argument("--tol", type=float, help="relative log-likelihood tolerance")
    fit.add_argument("--fix-r-zero", action="store_const", const=True, help="pin measurement variance to zero")
    fit.add_argument(
        "--paper-default-init",
        action="store_const",
        const=True,
        help="initialise all variances at the flat value 1",
    )
    fit.add_argument("--init-model", help="warm-start EM from a saved model file")

    fc = subs.add_parser("forecast", help="forecast counts beyond the data")
    _add_shared(fc)
    _add_data_opts(fc, with_model=True)
    fc.add_argument("--horizon", type=int, help="steps to forecast")
    fc.add_argument("--level", type=float, help="confidence level, e.g. 0.95")

    det = subs.add_parser("detect", help="flag anomalous snapshots")
    _add_shared(det)
    _add_data_opts(det, with_model=True)
    det.add_argument("--sigma", type=float, help="z-score threshold k")
    det.add_argument("--loglik-threshold", type=float, help="graph log-likelihood floor c0")
    det.add_argument("--mode", choices=["predictive", "smoothed"], help="scoring moments")
    det.add_argument("--drill-down", action="store_const", const=True, help="rank blocks under each graph flag")
    return parser


_COMMANDS = {
    "simulate": (SIMULATE_DEFAULTS, cmd_simulate),
    "fit": (FIT_DEFAULTS, cmd_fit),
    "forecast": (FORECAST_DEFAULTS, cmd_forecast),
    "detect": (DETECT_DEFAULTS, cmd_detect),
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
        command = args.pop("command")
        config = _load_config(args.pop("config", None))
        defaults, runner = _COMMANDS[command]
        resolved = _resolve(defaults, config, args)
        return runner(resolved)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IngestError, ModelFormatError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
