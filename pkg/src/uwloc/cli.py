"""``uwloc`` command line.

Exit codes: 0 success, 1 failure (including failed scenario thresholds),
2 usage or precondition errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import focus, logs, report, scenario, stackio
from .errors import DomainError, FitError, ScenarioError, UwlocError
from .protocol import SCHEMES, ProtocolState, ReplaySource, StepSchedule, Topology, run, write_trajectory_csv

OK, FAILED, USAGE = 0, 1, 2


class _Precondition(Exception):
    pass


def _say(args, *lines):
    if not args.quiet:
        for line in lines:
            print(line)


def _out(args, default) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_calibrate(args) -> int:
    try:
        samples = stackio.read_calibration_csv(args.samples)
    except FileNotFoundError as exc:
        raise _Precondition(f"calibration file not found: {exc.filename}") from None
    except stackio.FormatError as exc:
        raise _Precondition(str(exc)) from None
    try:
        fit = focus.fit_ranging_model(samples)
    except DomainError as exc:
        raise _Precondition(str(exc)) from None
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return FAILED
    out = _out(args, "calibration")
    result = {**fit.model.to_dict(), "r_squared": fit.r_squared, "rmse": fit.rmse, "samples": len(samples)}
    (out / "model.json").write_text(json.dumps(result, indent=2) + "\n")
    lines = [f"kappa     {fit.model.kappa:.6g}", f"focal     {fit.model.focal:.6g}",
             f"offset    {fit.model.offset:.6g}", f"R^2       {fit.r_squared:.6f}",
             f"RMSE      {fit.rmse:.6g}", f"samples   {len(samples)}"]
    (out / "fit_report.txt").write_text("\n".join(lines) + "\n")
    report.fit_figure(samples, fit, out / "calibration.png")
    _say(args, *lines)
    return OK


def _load_model(path) -> focus.RangingModel:
    try:
        data = json.loads(Path(path).read_text())
        return focus.RangingModel.from_dict(data)
    except FileNotFoundError:
        raise _Precondition(f"model file not found: {path}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise _Precondition(f"{path}: not a ranging model ({exc})") from None


def cmd_depthmap(args) -> int:
    model = _load_model(args.model)
    try:
        stack = stackio.read_stack(args.stack)
    except FileNotFoundError as exc:
        raise _Precondition(f"stack not found: {exc.filename or args.stack}") from None
    except stackio.FormatError as exc:
        raise _Precondition(str(exc)) from None
    depth = focus.depth_map(stack, model, block=args.block, threshold=args.threshold)
    out = _out(args, "depthmap")
    np.savetxt(out / "depth.csv", depth, delimiter=",", fmt="%.10g")
    from . import plotting

    with plotting.style():
        fig, ax = plotting.figure(1, height_ratio=depth.shape[0] / max(depth.shape[1], 1))
        im = ax[0, 0].imshow(depth, cmap="viridis")
        fig.colorbar(im, ax=ax[0, 0], label="depth [cm]")
        ax[0, 0].grid(False)
        plotting.save(fig, out / "depth.png")
    finite = depth[np.isfinite(depth)]
    _say(args, f"cells     {depth.size} ({finite.size} textured)",
         f"depth cm  min {finite.min():.4g}  max {finite.max():.4g}" if finite.size else "no textured cells")
    return OK


def cmd_protocol_run(args) -> int:
    try:
        source = ReplaySource.from_csv(args.replay)
    except FileNotFoundError:
        raise _Precondition(f"replay file not found: {args.replay}") from None
    n = args.nodes or source.n
    if n < 1:
        raise _Precondition("replay holds no nodes")
    topo = getattr(Topology, args.topology)(n)
    rounds = args.rounds if args.rounds is not None else source.rounds
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    traj = run(ProtocolState.initial(n), topo, args.weights, StepSchedule(args.c_alpha), source, rounds,
               drop_prob=args.drop_prob, rng=rng)
    out = _out(args, "protocol")
    write_trajectory_csv(out / "trajectory.csv", traj)
    final = traj[-1].estimates
    lines = [f"rounds    {rounds}"]
    for i, x in enumerate(final):
        lines.append(f"node {i}    " + ("uninitialised" if not np.all(np.isfinite(x)) else " ".join(f"{v:.6f}" for v in x)))
    if args.target:
        from .protocol import convergence_metrics

        m = convergence_metrics(traj, args.target)
        np.savetxt(out / "summary.csv", np.column_stack([np.arange(len(m)), m]), delimiter=",",
                   header="t,max_error,spread", comments="", fmt="%.10g")
        lines.append(f"final max error {m[-1, 0]:.6g}")
    _say(args, *lines)
    return OK


def _hover_document(args) -> dict:
    doc = json.loads(scenario.bundled_path("push").read_text())
    doc["name"] = "hover"
    doc["robots"][0]["depth_setpoints"] = [[0.0, args.depth]]
    doc["run"]["rounds"] = max(1, int(round(args.seconds / doc["run"].get("round_period", 0.5))))
    if args.push_time is None:
        doc["disturbances"] = []
        doc["acceptance"] = {}
    else:
        doc["disturbances"] = [{"time": args.push_time, "robot": 0, "impulse": args.impulse,
                                "torque_impulse": args.torque}]
        doc["acceptance"]["recovery"]["after"] = args.push_time
    return doc


def _run_and_report(args, doc, default_out) -> int:
    sc = scenario.build(doc, seed=args.seed, rounds=args.rounds)
    from .sim import run_scenario

    log = run_scenario(sc)
    out = _out(args, default_out)
    logs.write_log(out, log, sc.source)
    checks = report.evaluate(log, sc.acceptance)
    summary = report.summarize(log, sc.acceptance)
    report.write_summary_csv(out / "report.csv", summary, checks)
    report.render_figures(log, out)
    _say(args, f"scenario  {sc.name}", report.format_summary(summary, checks), f"logs      {out}")
    return OK if all(c.passed for c in checks) else FAILED


def cmd_hover(args) -> int:
    return _run_and_report(args, _hover_document(args), "hover")


def cmd_scenario(args) -> int:
    path = Path(args.scenario)
    if not path.exists() and args.scenario in scenario.BUNDLED:
        path = scenario.bundled_path(args.scenario)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise _Precondition(f"scenario not found: {args.scenario}") from None
    except json.JSONDecodeError as exc:
        raise _Precondition(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    try:
        return _run_and_report(args, doc, Path("runs") / path.stem)
    except ScenarioError as exc:
        raise _Precondition(f"{path}: {exc}") from None


def cmd_report(args) -> int:
    try:
        log = logs.read_log(args.logdir)
    except logs.LogNotFoundError as exc:
        raise _Precondition(str(exc)) from None
    acceptance = {}
    spec = Path(args.logdir) / "scenario.json"
    if spec.is_file():
        acceptance = json.loads(spec.read_text()).get("acceptance", {})
    checks = report.evaluate(log, acceptance)
    summary = report.summarize(log, acceptance, args.tolerance)
    out = _out(args, args.logdir)
    report.write_summary_csv(out / "report.csv", summary, checks)
    if not args.no_figures:
        report.render_figures(log, out)
    _say(args, report.format_summary(summary, checks))
    return OK if all(c.passed for c in checks) else FAILED


def _triple(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers")
    return parts


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the master random seed")
    common.add_argument("--rounds", type=int, help="override the number of protocol rounds")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")

    p = argparse.ArgumentParser(prog="uwloc", description="Underwater multi-robot localisation toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", parents=[common], help="fit the focus ranging model to samples")
    c.add_argument("samples", help="CSV with header rho_star,u_cm")
    c.set_defaults(func=cmd_calibrate)

    d = sub.add_parser("depthmap", parents=[common], help="block depth map from a focus stack")
    d.add_argument("stack", help="directory holding stack.idx and its frames")
    d.add_argument("--model", required=True, help="model.json written by calibrate")
    d.add_argument("--block", type=int, default=50)
    d.add_argument("--threshold", type=float, default=0.0)
    d.set_defaults(func=cmd_depthmap)

    r = sub.add_parser("protocol-run", parents=[common], help="replay measurements through the protocol")
    r.add_argument("replay", help="CSV with header t,node,x,y,z,valid")
    r.add_argument("--topology", choices=["complete", "path", "ring"], default="complete")
    r.add_argument("--weights", choices=SCHEMES, default=SCHEMES[0])
    r.add_argument("--c-alpha", type=float, default=1.0)
    r.add_argument("--drop-prob", type=float, default=0.0)
    r.add_argument("--nodes", type=int, help="node count (default: from the replay)")
    r.add_argument("--target", type=_triple, help="true target x,y,z for error metrics")
    r.set_defaults(func=cmd_protocol_run)

    h = sub.add_parser("hover", parents=[common], help="single-robot depth hold, optionally pushed")
    h.add_argument("--depth", type=float, default=0.3)
    h.add_argument("--seconds", type=float, default=10.0)
    h.add_argument("--push-time", type=float)
    h.add_argument("--impulse", type=_triple, default=[0.6, 0.0, 0.0])
    h.add_argument("--torque", type=_triple, default=[0.05, 0.01, 0.0])
    h.set_defaults(func=cmd_hover)

    s = sub.add_parser("scenario", parents=[common], help="run a scenario file or a bundled scenario")
    s.add_argument("scenario", help=f"JSON path or one of {', '.join(scenario.BUNDLED)}")
    s.set_defaults(func=cmd_scenario)

    rp = sub.add_parser("report", parents=[common], help="summarise logs written by scenario or hover")
    rp.add_argument("logdir")
    rp.add_argument("--tolerance", type=float, help="convergence tolerance in metres")
    rp.add_argument("--no-figures", action="store_true")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else OK
    try:
        return args.func(args)
    except _Precondition as exc:
        print(f"uwloc {args.command}: {exc}", file=sys.stderr)
        return USAGE
    except UwlocError as exc:
        print(f"uwloc {args.command}: {exc}", file=sys.stderr)
        return FAILED


if __name__ == "__main__":
    sys.exit(main())
