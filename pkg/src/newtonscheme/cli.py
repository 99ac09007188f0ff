"""Command-line interface.

Subcommands: ``generate``, ``fit``, ``predict``, ``track`` and ``bench``.
Every command that writes files also writes a ``<out>.manifest.json``
sidecar recording the arguments, scenario and inputs of the run.

Exit status is 0 on success, 2 on usage errors (bad flags or malformed
input files) and 1 on runtime failures.  No output file is written unless
the whole run succeeds.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .basis import Library
from .fit import FitConfig, ModelDescriptor, fit_trajectory, force_of
from .formats import (
    format_float,
    manifest_path,
    read_manifest,
    trajectory_from_csv,
    trajectory_to_csv,
    write_files,
)
from .scenario import (
    CurveBall,
    DampedPendulum,
    FreeFall,
    NoiseSpec,
    ScenarioSpec,
    add_noise,
    evaluate,
    evaluate_piecewise,
    gen_piecewise,
    generate,
)
from .track import Tracker, TrackerConfig, events_to_jsonl

SCENARIOS = ("free_fall", "damped_pendulum", "curve_ball", "regime_switch")


class UsageError(Exception):
    """Bad arguments or unreadable input; exit status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- scenario construction ---------------------------------------------------


def _pick(args, mapping):
    return {key: getattr(args, attr) for attr, key in mapping.items() if getattr(args, attr) is not None}


def _scenario(args, duration):
    """Return ``(provenance dict, clean trajectory factory)`` for ``args``."""
    rate = args.rate
    kind = args.scenario
    if kind == "free_fall":
        params = FreeFall(**_pick(args, {"x0": "x0", "v0": "v0", "accel": "accel"}))
        mass = args.mass if args.mass is not None else 1e-5
    elif kind == "damped_pendulum":
        params = DampedPendulum(
            **_pick(args, {"amplitude": "a", "gamma": "gamma", "omega": "omega", "phi": "phi"})
        )
        mass = args.mass if args.mass is not None else 1.0
    elif kind == "curve_ball":
        fields = {
            "theta0": "theta0", "lam": "lam", "spin_radius": "R", "spin_rate": "omega0",
            "v0xy": "v0xy", "tau": "tau", "length": "L", "z0": "z0", "g": "g",
        }
        kw = _pick(args, fields)
        if args.with_gravity:
            kw["with_gravity"] = True
        params = CurveBall(**kw)
        mass = args.mass if args.mass is not None else 0.43
    else:
        switch = args.switch_time if args.switch_time is not None else 5.0
        v0 = args.v0 if args.v0 is not None else 1.0
        accel = args.accel if args.accel is not None else -9.8
        x0 = args.x0 if args.x0 is not None else 0.0
        mass = args.mass if args.mass is not None else 1.0
        if not 0 < switch < duration:
            raise UsageError("--switch-time must fall inside the duration")
        segments = [
            (ScenarioSpec(FreeFall(x0, v0, 0.0), 0.0, switch, rate, mass), switch),
            (ScenarioSpec(FreeFall(0.0, v0, accel), 0.0, duration - switch, rate, mass), duration - switch),
        ]
        prov = {
            "kind": "piecewise",
            "segments": [{"spec": s.to_dict(), "duration": d} for s, d in segments],
        }
        return prov, lambda: gen_piecewise(segments)
    spec = ScenarioSpec(params, 0.0, duration, rate, mass)
    return spec.to_dict(), lambda: generate(spec)


def _scenario_checked(args, duration):
    try:
        return _scenario(args, duration)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def oracle(provenance, times):
    """Closed-form values for the scenario recorded in ``provenance``."""
    if provenance is None:
        return None
    if provenance.get("kind") == "piecewise":
        segments = [(ScenarioSpec.from_dict(s["spec"]), float(s["duration"])) for s in provenance["segments"]]
        return evaluate_piecewise(segments, times)
    return evaluate(ScenarioSpec.from_dict(provenance), times)


# -- helpers -----------------------------------------------------------------


def _read_trajectory(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    try:
        return trajectory_from_csv(text)
    except ValueError as exc:
        raise UsageError(f"malformed trajectory {path}: {exc}") from None


def _fit_config(args):
    kw = {}
    if args.max_terms is not None:
        kw["max_terms"] = args.max_terms
    if args.rmse_accept is not None:
        kw["rmse_accept"] = args.rmse_accept
    try:
        return FitConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _library(args):
    return Library.from_mode(args.library)


def _manifest(args, argv, scenario=None, inputs=(), outputs=(), extra=None):
    doc = {
        "command": args.command,
        "argv": list(argv),
        "options": {k: v for k, v in sorted(vars(args).items()) if k != "command"},
        "scenario": scenario,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": getattr(args, "seed", None),
        "version": __version__,
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2) + "\n"


def _require_out(args):
    if args.out is None:
        raise UsageError(f"{args.command} requires --out")
    return Path(args.out)


def _prediction_times(t0, t_to, rate):
    n = math.floor((t_to - t0) * rate + 1e-9)
    times = t0 + np.arange(n + 1) / rate
    if times[-1] < t_to:
        times = np.append(times, t_to)
    return times


def _table(rows, columns):
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(format_float(row[c]) if isinstance(row[c], float) else str(row[c]) for c in columns))
    return "\n".join(lines) + "\n"


# -- commands ----------------------------------------------------------------


def cmd_generate(args, argv, stdout):
    out = _require_out(args)
    duration = args.duration if args.duration is not None else 20.0
    if not duration > 0:
        raise UsageError("--duration must be > 0")
    prov, make = _scenario_checked(args, duration)
    traj = make()
    if args.noise_sigma:
        traj = add_noise(traj, NoiseSpec(args.noise_sigma, args.seed))
    noise = {"sigma": args.noise_sigma or 0.0, "seed": args.seed}
    write_files({
        out: trajectory_to_csv(traj),
        manifest_path(out): _manifest(args, argv, prov, (), [out], {"noise": noise}),
    })
    print(f"wrote {len(traj)} samples to {out}", file=stdout)


def cmd_fit(args, argv, stdout):
    out = _require_out(args)
    if args.input is None:
        raise UsageError("fit requires --in")
    traj = _read_trajectory(args.input)
    if args.window is not None:
        traj = traj.window(traj.times[0], traj.times[0] + args.window)
    config = _fit_config(args)
    source = read_manifest(args.input)
    provenance = source.get("scenario") if source else None
    model = fit_trajectory(traj, _library(args), config, provenance=provenance)
    mass = args.mass if args.mass is not None else None

    cols = ["t"]
    data = [traj.times]
    pred = model.predict(traj.times)
    for name in model.channel_names:
        obs = traj.channel(name)
        fitted = pred.channel(name)
        cols += [f"{name}_observed", f"{name}_fitted", f"{name}_residual"]
        data += [obs, fitted, obs - fitted]
        if mass is not None:
            cols.append(f"{name}_force")
            data.append(force_of(model.channels[name].model, mass, traj.times)[0])
    report = [",".join(cols)]
    for row in np.column_stack(data).tolist():
        report.append(",".join(map(repr, row)))
    residual_path = out.with_name(out.name + ".residuals.csv")
    write_files({
        out: model.to_json() + "\n",
        residual_path: "\n".join(report) + "\n",
        manifest_path(out): _manifest(args, argv, provenance, [args.input], [out, residual_path]),
    })
    for name, r in model.channels.items():
        support = " + ".join(str(t) for t in r.model.terms)
        print(
            f"{name}: {'accepted' if r.accepted else 'rejected'} support=[{support}] "
            f"rmse={r.model.rmse:.3e} candidates={r.candidates_evaluated}",
            file=stdout,
        )


def cmd_predict(args, argv, stdout):
    out = _require_out(args)
    if args.input is None or args.to is None:
        raise UsageError("predict requires --in and --to")
    try:
        model = ModelDescriptor.from_json(Path(args.input).read_text())
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"malformed model descriptor {args.input}: {exc}") from None
    rate = args.rate or model.sample_rate or 100.0
    t0 = model.fit_window[0]
    if not args.to > t0:
        raise UsageError("--to must lie after the start of the fit window")
    times = _prediction_times(t0, args.to, rate)
    pred = model.predict(times)
    truth = oracle(model.provenance, times)
    cols, data = ["t"], [times]
    for name in model.channel_names:
        cols.append(f"{name}_predicted")
        data.append(pred.channel(name))
        if truth is not None and name in truth.channel_names:
            cols += [f"{name}_oracle", f"{name}_abs_error"]
            data += [truth.channel(name), np.abs(pred.channel(name) - truth.channel(name))]
    lines = [",".join(cols)] + [",".join(map(repr, row)) for row in np.column_stack(data).tolist()]
    write_files({
        out: "\n".join(lines) + "\n",
        manifest_path(out): _manifest(args, argv, model.provenance, [args.input], [out]),
    })
    if truth is not None:
        errs = [abs(pred.channel(n)[-1] - truth.channel(n)[-1]) for n in model.channel_names if n in truth.channel_names]
        print(f"abs error at t={args.to}: {max(errs):.3e}", file=stdout)


def cmd_track(args, argv, stdout):
    out = _require_out(args)
    if args.input is None:
        raise UsageError("track requires --in")
    traj = _read_trajectory(args.input)
    window = 100 if args.window is None else int(round(args.window * traj.sample_rate))
    kw = {"window": window, "fit_config": _fit_config(args), "library": _library(args)}
    if args.check_eps is not None:
        kw["check_eps"] = args.check_eps
    if args.consecutive_k is not None:
        kw["consecutive_k"] = args.consecutive_k
    if args.mass is not None:
        kw["mass"] = args.mass
    try:
        config = TrackerConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    tracker = Tracker(traj.channel_names, config)
    cols = ["t", "phase"] + [f"{n}_observed" for n in traj.channel_names] + [
        f"{n}_predicted" for n in traj.channel_names
    ]
    lines = [",".join(cols)]
    for t, row in zip(traj.times, traj.values):
        before = tracker.phase
        pred = tracker.predict(t) if before.value == "Locked" else None
        tracker.observe(t, row)
        fields = [repr(float(t)), before.value] + [repr(v) for v in row.tolist()]
        fields += [repr(float(v)) for v in pred] if pred is not None else [""] * len(row)
        lines.append(",".join(fields))
    source = read_manifest(args.input)
    stitched = out.with_name(out.name + ".stitched.csv")
    write_files({
        out: events_to_jsonl(tracker.events),
        stitched: "\n".join(lines) + "\n",
        manifest_path(out): _manifest(
            args, argv, source.get("scenario") if source else None, [args.input], [out, stitched]
        ),
    })
    kinds = [e.kind for e in tracker.events]
    print(
        f"locks={kinds.count('LockAcquired')} checks={kinds.count('Checked')} "
        f"refits={kinds.count('RefitTriggered')} fits_run={tracker.state.fits_run}",
        file=stdout,
    )


def bench_rows(traj, truth_at, horizon_t, window_end, library_config, channels=None):
    """Prediction errors of three methods fitted on the same window.

    ``truth_at(times)`` returns the oracle trajectory.  Methods: full
    library, polynomial-only library, and a straight line through the last
    two window samples.
    """
    fit_part = traj.window(traj.times[0], window_end)
    span = traj.times[traj.times >= window_end]
    span = span[span <= horizon_t]
    times = np.append(span, horizon_t) if (span.size == 0 or span[-1] < horizon_t) else span
    truth = truth_at(times)
    names = channels or traj.channel_names
    rows = []
    for method, library in (("full", Library.full()), ("poly", Library.polynomial_only())):
        model = fit_trajectory(fit_part, library, library_config, channels=names)
        pred = model.predict(times)
        for name in names:
            r = model.channels[name]
            err = pred.channel(name) - truth.channel(name)
            rows.append({
                "method": method,
                "channel": name,
                "accepted": str(r.accepted).lower(),
                "support": " + ".join(str(t) for t in r.model.terms),
                "abs_error_at_horizon": float(abs(err[-1])),
                "rmse_prediction_span": float(np.sqrt(np.mean(err * err))),
            })
    t_a, t_b = fit_part.times[-2], fit_part.times[-1]
    for name in names:
        ya, yb = fit_part.channel(name)[-2], fit_part.channel(name)[-1]
        line = yb + (yb - ya) / (t_b - t_a) * (times - t_b)
        err = line - truth.channel(name)
        rows.append({
            "method": "linear",
            "channel": name,
            "accepted": "n/a",
            "support": "last-two-sample line",
            "abs_error_at_horizon": float(abs(err[-1])),
            "rmse_prediction_span": float(np.sqrt(np.mean(err * err))),
        })
    return rows


BENCH_COLUMNS = ["method", "channel", "accepted", "support", "abs_error_at_horizon", "rmse_prediction_span"]


def cmd_bench(args, argv, stdout):
    window = args.window if args.window is not None else 10.0
    horizon = args.horizon if args.horizon is not None else 10.0
    if not (window > 0 and horizon > 0):
        raise UsageError("--window and --horizon must be > 0")
    horizon_t = window + horizon
    # samples cover the horizon itself
    prov, make = _scenario_checked(args, horizon_t + 1.0 / args.rate)
    traj = make()
    if args.noise_sigma:
        traj = add_noise(traj, NoiseSpec(args.noise_sigma, args.seed))
    channels = ["s", "theta"] if args.scenario == "curve_ball" else None
    rows = bench_rows(traj, lambda t: oracle(prov, t), horizon_t, window, _fit_config(args), channels)
    table = _table(rows, BENCH_COLUMNS)
    stdout.write(table)
    if args.out is not None:
        out = Path(args.out)
        write_files({out: table, manifest_path(out): _manifest(args, argv, prov, (), [out])})


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="newtonscheme", description=__doc__.splitlines()[0], allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p):
        p.add_argument("--out")
        p.add_argument("--seed", type=int, default=0)

    def fitting(p):
        p.add_argument("--window", type=float, help="seconds of data to use")
        p.add_argument("--library", choices=("full", "poly"), default="full")
        p.add_argument("--max-terms", type=int)
        p.add_argument("--rmse-accept", type=float)
        p.add_argument("--mass", type=float)

    def scenario(p):
        p.add_argument("--scenario", choices=SCENARIOS, required=True)
        p.add_argument("--rate", type=float, default=100.0)
        p.add_argument("--noise-sigma", type=float, default=0.0)
        for flag in ("--x0", "--v0", "--accel", "--switch-time", "--amplitude", "--gamma", "--omega",
                     "--phi", "--theta0", "--lam", "--spin-radius", "--spin-rate", "--v0xy", "--tau",
                     "--length", "--z0", "--g"):
            p.add_argument(flag, type=float)
        p.add_argument("--with-gravity", action="store_true")

    p = sub.add_parser("generate", allow_abbrev=False, help="write a scenario trajectory CSV")
    common(p)
    scenario(p)
    p.add_argument("--duration", type=float)
    p.add_argument("--mass", type=float)

    p = sub.add_parser("fit", allow_abbrev=False, help="identify a model for a trajectory CSV")
    common(p)
    fitting(p)
    p.add_argument("--in", dest="input")

    p = sub.add_parser("predict", allow_abbrev=False, help="evaluate a fitted model up to --to")
    common(p)
    p.add_argument("--in", dest="input")
    p.add_argument("--to", type=float)
    p.add_argument("--rate", type=float)

    p = sub.add_parser("track", allow_abbrev=False, help="run the lock/check/refit loop on a CSV")
    common(p)
    fitting(p)
    p.add_argument("--in", dest="input")
    p.add_argument("--check-eps", type=float)
    p.add_argument("--consecutive-k", type=int)

    p = sub.add_parser("bench", allow_abbrev=False, help="compare full, polynomial and linear predictions")
    common(p)
    scenario(p)
    p.add_argument("--window", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--max-terms", type=int)
    p.add_argument("--rmse-accept", type=float)
    p.add_argument("--mass", type=float)
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "track": cmd_track,
    "bench": cmd_bench,
}


def run_cli(argv=None, stdout=None, stderr=None) -> int:
    """Run one command; returns the process exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "rate", None) is not None and not args.rate > 0:
            raise UsageError("--rate must be > 0")
        COMMANDS[args.command](args, argv, stdout)
    except UsageError as exc:
        print(f"newtonscheme: usage error: {exc}", file=stderr)
        return 2
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    except Exception as exc:
        print(f"newtonscheme: error: {exc}", file=stderr)
        return 1
    return 0


def main():
    sys.exit(run_cli())
