"""Command-line entry point.

Subcommands:
    simulate   run a scenario, write capture, verdict CSVs and a JSON summary
    replay     recompute verdicts from a saved capture
    export     dump a capture's records as CSV
    analyze    probability curves, attack Monte Carlo, DET curves, protection rates

Exit status is 0 on success (whatever the detectors conclude) and 1 on errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from camspoof import __version__
from camspoof import analytics, evaluation, scenario as scenario_mod
from camspoof.defense import WIDTH_VERDICT_HEADER
from camspoof.detectors import (
    DETECTOR_NAMES,
    DetectorConfig,
    FrameObservation,
    run_detectors,
    verdict_csv,
)
from camspoof.protocol import ProtocolError
from camspoof.sim import Capture, CaptureError, ReceivedFrame, replay, run_session

logger = logging.getLogger("camspoof")

FIELD_DETECTION_RATES = {1: "0.16-0.19", 2: "0.39-0.44", 3: "0.69-0.75"}


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _observations(frames: Sequence[ReceivedFrame]) -> List[FrameObservation]:
    return [FrameObservation.from_raw(f.leader, f.result.buffer, f.result.arrival_ns) for f in frames]


def width_verdict_csv(frames: Sequence[ReceivedFrame]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(WIDTH_VERDICT_HEADER)
    for f in frames:
        if f.width_verdict is not None:
            w.writerow(f.width_verdict.csv_row())
    return out.getvalue()


def summarize(effective: Dict[str, Any], frames: Sequence[ReceivedFrame], verdicts, attack_log=None) -> Dict[str, Any]:
    widths = [f.width_verdict for f in frames if f.width_verdict is not None]
    return {
        "version": __version__,
        "config": effective,
        "seed": effective["sim"]["seed"],
        "frames": len(frames),
        "incomplete_frames": sum(not f.result.complete for f in frames),
        "alerts": {name: sum(getattr(v, name) for v in verdicts) for name in DETECTOR_NAMES},
        "combined_alerts": sum(v.combined for v in verdicts),
        "width_invalid": sum(not v.valid for v in widths),
        "width_checked": len(widths),
        "attack_log": [] if attack_log is None else [list(e) for e in attack_log.entries],
    }


def cmd_simulate(args: argparse.Namespace) -> int:
    sc = scenario_mod.load(args.scenario, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    effective = sc.effective()
    result = run_session(sc.sim, sc.attack, sc.defense, header={"scenario": effective})
    verdicts = run_detectors(_observations(result.frames), sc.detectors)
    result.capture.save(out / sc.outputs["capture"])
    (out / sc.outputs["verdicts"]).write_text(verdict_csv(verdicts))
    (out / sc.outputs["width_verdicts"]).write_text(width_verdict_csv(result.frames))
    summary = summarize(effective, result.frames, verdicts, result.attack_log)
    (out / sc.outputs["summary"]).write_text(_dump_json(summary))
    print(f"{len(result.frames)} frames, {summary['combined_alerts']} with alerts, "
          f"{summary['width_invalid']} invalid widths -> {out}")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    capture = Capture.load(args.capture)
    effective = capture.config.get("scenario")
    if args.scenario:
        effective = scenario_mod.load(args.scenario).effective()
    if effective is None:
        raise CaptureError("capture carries no scenario; pass --scenario")
    det = dict(effective["detectors"])
    if args.mse_threshold is not None:
        det["mse_threshold"] = args.mse_threshold
    if args.hist_threshold is not None:
        det["hist_threshold"] = args.hist_threshold
    cfg = DetectorConfig(**det)
    effective = dict(effective, detectors=asdict(cfg))
    d_max = effective["defense"]["d_max"] if effective.get("defense") else None
    frames = replay(capture, d_max, effective["sim"]["max_payload"])
    verdicts = run_detectors(_observations(frames), cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = effective.get("outputs", scenario_mod.DEFAULT_OUTPUTS)
    (out / outputs["verdicts"]).write_text(verdict_csv(verdicts))
    (out / outputs["width_verdicts"]).write_text(width_verdict_csv(frames))
    (out / outputs["summary"]).write_text(_dump_json(summarize(effective, frames, verdicts)))
    print(f"replayed {len(frames)} frames -> {out}")
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    text = Capture.load(args.capture).csv_text()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _analyze_prob(args: argparse.Namespace, out: Path) -> Dict[str, Any]:
    r = analytics.n_stop(args.tstop, args.fps)
    kind = "fullframe" if args.variant == "detection" else "stripe"
    horizon = np.arange(0.0, args.tattack_max + 1e-9, args.tattack_step)
    rows = []
    waits = {}
    for b in _int_list(args.b):
        p = analytics.attack_success_prob(b, kind, args.dmax)
        for t in horizon:
            n = int(round(t * args.fps))
            rows.append([b, f"{t:g}", n, r, repr(p), repr(analytics.p_run(n, r, p))])
        waits[str(b)] = {"p": p, "expected_attempts": analytics.expected_attempts(r, p),
                         "expected_time_s": analytics.expected_time(r, p, args.fps)}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["b", "t_attack_s", "n", "r", "p", "p_run"])
    w.writerows(rows)
    (out / "prob_curve.csv").write_text(buf.getvalue())
    return {"r": r, "variant": args.variant, "expected_wait": waits}


def _analyze_runs(args: argparse.Namespace, out: Path) -> Dict[str, Any]:
    reports = {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["b", "run_length", "count"])
    for b in _int_list(args.b):
        rep = evaluation.monte_carlo_attack(b, args.frames, args.trials, args.seed, args.dmax, args.fps)
        summary = rep.summary()
        summary["field_detection_rate"] = FIELD_DETECTION_RATES.get(b)
        summary["field_reference"] = {"longest_undetected_s": 0.2, "success_probability": "0.19-0.2%"}
        reports[str(b)] = summary
        for length, count in sorted(rep.run_histogram.items()):
            w.writerow([b, length, count])
    (out / "run_histogram.csv").write_text(buf.getvalue())
    return {"reports": reports}


def _thresholds(text: str) -> List[float]:
    start, stop, step = (float(v) for v in text.split(":"))
    count = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 10) for i in range(count)]


def _analyze_det(args: argparse.Namespace, out: Path) -> Dict[str, Any]:
    thresholds = _thresholds(args.thresholds)
    if args.normal and args.attack:
        normal = analytics.read_scores(Path(args.normal).read_text())
        attack = analytics.read_scores(Path(args.attack).read_text())
        source = {"normal": args.normal, "attack": args.attack}
    else:
        normal, attack = evaluation.histogram_det_scores(args.pairs, args.seed)
        source = {"generated": "histogram", "pairs": args.pairs}
    curve = analytics.det_curve(normal, attack, thresholds, args.flag_below)
    (out / "det_curve.csv").write_text(curve.csv_text())
    zero = curve.zero_error_thresholds()
    return {"source": source, "zero_error_thresholds": zero, "points": len(curve.points)}


def _analyze_protect(args: argparse.Namespace, out: Path) -> Dict[str, Any]:
    summaries = {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["b", "width_difference", "injections", "recognized", "defense_rate"])
    for b in _int_list(args.b):
        rep = evaluation.protection_eval(b, args.injections, args.seed)
        summaries[str(b)] = rep.summary()
        for d, bk in sorted(rep.buckets.items()):
            w.writerow([b, d, bk.injections, bk.recognized, repr(bk.defense_rate)])
    (out / "protection.csv").write_text(buf.getvalue())
    return {"reports": summaries}


_ANALYSES = {"prob": _analyze_prob, "runs": _analyze_runs, "det": _analyze_det, "protect": _analyze_protect}


def cmd_analyze(args: argparse.Namespace) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out_dir", "verbose")}
    report = {"version": __version__, "kind": args.kind, "params": params}
    report.update(_ANALYSES[args.kind](args, out))
    (out / f"{args.kind}_report.json").write_text(_dump_json(report))
    print(f"analyze {args.kind} -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camspoof", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--seed", type=int, help="override sim.seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="recompute verdicts from a capture")
    p.add_argument("--capture", required=True)
    p.add_argument("--scenario", help="take detector settings from this scenario instead of the capture")
    p.add_argument("--mse-threshold", type=float)
    p.add_argument("--hist-threshold", type=float)
    p.add_argument("--out-dir", default="out-replay")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("export", help="capture records as CSV")
    p.add_argument("--capture", required=True)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("analyze", help="analytic and Monte Carlo reports")
    p.add_argument("kind", choices=sorted(_ANALYSES))
    p.add_argument("--out-dir", default="out-analyze")
    p.add_argument("--b", default="1,2,3", help="comma-separated bits per frame")
    p.add_argument("--dmax", type=int, default=1)
    p.add_argument("--fps", type=float, default=20.0)
    p.add_argument("--tstop", type=float, default=0.25, help="seconds of sign exposure the ADAS needs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--frames", type=int, default=100_000)
    p.add_argument("--variant", choices=["detection", "protection"], default="detection",
                   help="per-frame success from full-frame detection or stripe protection")
    p.add_argument("--tattack-max", type=float, default=60.0)
    p.add_argument("--tattack-step", type=float, default=0.5)
    p.add_argument("--injections", type=int, default=500, help="injections per width difference")
    p.add_argument("--normal", help="normal-score file, one real per line")
    p.add_argument("--attack", help="attack-score file, one real per line")
    p.add_argument("--pairs", type=int, default=200)
    p.add_argument("--thresholds", default="0.05:0.95:0.05", help="start:stop:step")
    p.add_argument("--flag-below", action="store_true", help="scores below the threshold are alerts")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
