"""Command-line entry point (``hourmem <subcommand>``).

Every subcommand writes its CSV/JSON outputs plus ``run_log.jsonl`` into
``--out`` and exits 0 only when all of its invariant checks pass.

``--config`` takes a YAML (or JSON) mapping.  Keys under ``needle`` override
the needle-task defaults; other top-level keys override subcommand options,
for example::

    needle: {steps: 500, frames: 64}
    trials: 2
    scales: [full, half, quarter, decayed_only]
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import dataprep, harness
from .encode import FrameStream, Projector, avg_pool_grid, decode_marker, encode_video, synth_frames
from .forget import ForgetConfig, apply_forgetting
from .pipeline import NeedleConfig

CSV_HEADERS = {
    "token_counts.csv": "seconds,hour_llava,uniform_64,vanilla_1fps",
    "gradcheck.csv": "case,seed,max_error,passed,worst_param,coords",
    "needle.csv": "temporal_strategy,memory_scale,seed,accuracy,final_loss,needle_kept_rate,memory_tokens,"
                  "decoder_tokens,generate_agrees,wall_clock_s",
    "compare.csv": "method,temporal_strategy,memory_scale,trials,accuracy_mean,accuracy_std,decoder_tokens,"
                   "memory_tokens",
    "sweep.csv": "ratio,trials,accuracy_mean,accuracy_std,decoder_tokens,memory_tokens",
    "encode.csv": "frame,timestamp,mean_norm,decoded_marker,planted_marker",
}


class RunLog:
    def __init__(self, path: Path, command: str):
        self.fh = open(path, "a", encoding="utf-8")
        self.command = command
        self.t0 = time.perf_counter()

    def __call__(self, record: dict) -> None:
        rec = {"command": self.command, "t_s": round(time.perf_counter() - self.t0, 3), **record}
        self.fh.write(json.dumps(rec, sort_keys=True, default=str) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def _load_config(path) -> dict:
    if path is None:
        return {}
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise SystemExit(f"config {path} must be a mapping")
    return data


def _needle_base(args, cfg: dict) -> NeedleConfig:
    over = dict(cfg.get("needle", {}))
    if args.seed is not None:
        over["seed"] = args.seed
    return replace(NeedleConfig(), **over)


def _opt(args, cfg: dict, name: str, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return cfg.get(name, default)


def _finish(report: harness.ExperimentReport, out: Path, log: RunLog, csv_name: str, table: str = "rows") -> bool:
    report.to_csv(out / csv_name, table)
    (out / f"{report.name}_report.json").write_text(report.to_json(), encoding="utf-8")
    log({"event": "checks", **report.checks})
    return report.passed


def cmd_token_count(args, cfg, out, log) -> bool:
    seconds = _opt(args, cfg, "seconds", [20, 60, 128, 1025, 1026, 2000, 2048, 3000, 3600])
    rows = harness.token_table(seconds)
    cross = harness.uniform_crossover()
    checks = {
        "hour_llava<=vanilla": all(r["hour_llava"] <= r["vanilla_1fps"] for r in rows),
        "crossover_below": harness.token_count("hour_llava", cross) <= harness.token_count("uniform_64", cross),
        "crossover_above": harness.token_count("hour_llava", cross + 1) > harness.token_count("uniform_64", cross + 1),
    }
    rep = harness.ExperimentReport("token_count", {"seconds": list(seconds), "crossover": cross}, [], rows, [], checks)
    return _finish(rep, out, log, "token_counts.csv")


def cmd_gradcheck(args, cfg, out, log) -> bool:
    seeds = _opt(args, cfg, "seeds", [0, 1, 2, 3, 4])
    if args.seed is not None:
        seeds = [args.seed]
    rep = harness.gradcheck_suite(seeds, tol=cfg.get("tol", 1e-4), logger=log)
    return _finish(rep, out, log, "gradcheck.csv")


def _parse_planted(items) -> tuple:
    planted = []
    for item in items or []:
        frame, marker = (int(x) for x in str(item).split(":"))
        planted.append((frame, marker))
    return tuple(planted)


def cmd_encode(args, cfg, out, log) -> bool:
    seed = args.seed or 0
    stream = FrameStream(_opt(args, cfg, "frames", 16), cfg.get("raw_dim", 32), tuple(cfg.get("grid", (16, 16))),
                         seed, _parse_planted(_opt(args, cfg, "plant", ["3:7"])))
    target = tuple(cfg.get("pooled", (8, 8)))
    seq = encode_video(stream, Projector.init(stream.raw_dim, cfg.get("d_model", 64), seed=seed), target)
    pooled = avg_pool_grid(synth_frames(stream), stream.grid, target).data
    planted = dict(stream.planted)
    rows = [{"frame": f, "timestamp": int(seq.timestamps[f]),
             "mean_norm": float(np.linalg.norm(seq.tokens.data[f].mean(axis=0))),
             "decoded_marker": decode_marker(pooled[f]), "planted_marker": planted.get(f, "")}
            for f in range(stream.num_frames)]
    checks = {"planted_markers_decodable": all(rows[f]["decoded_marker"] == m for f, m in planted.items()),
              "shape": seq.tokens.shape == (stream.num_frames, target[0] * target[1], seq.d_model)}
    rep = harness.ExperimentReport("encode", {"frames": stream.num_frames, "seed": seed}, [seed], rows, [], checks)
    return _finish(rep, out, log, "encode.csv")


def cmd_compress(args, cfg, out, log) -> bool:
    seed = args.seed or 0
    frames = _opt(args, cfg, "frames", 256)
    stream = FrameStream(frames, 32, (16, 16), seed)
    seq = encode_video(stream, Projector.init(32, 64, seed=seed))
    fcfg = ForgetConfig(cfg.get("spatial_strategy", "random"), cfg.get("spatial_ratio", "1/4"),
                        _opt(args, cfg, "temporal_strategy", "uniform"), cfg.get("temporal_ratio", "1/4"),
                        rng_seed=seed)
    if fcfg.temporal_strategy == "question_guided":
        raise SystemExit("compress: question_guided needs a question; use the library API")
    plan, decayed = apply_forgetting(seq, None, fcfg)
    (out / "selection_plan.jsonl").write_text(plan.to_record(f"synthetic-{seed}") + "\n", encoding="utf-8")
    kept = decayed.tokens.shape[0] * decayed.tokens.shape[1]
    total = frames * seq.tokens_per_frame
    row = {"frames": frames, "kept_frames": len(plan.kept_frames), "kept_tokens": kept, "total_tokens": total,
           "fraction": kept / total}
    rep = harness.ExperimentReport("compress", {"frames": frames, "seed": seed}, [seed], [row], [],
                                   {"plan_valid": True, "replay_roundtrip":
                                    plan.from_record(plan.to_record()).kept_frames.tolist() == plan.kept_frames.tolist()})
    return _finish(rep, out, log, "compress.csv")


def cmd_needle(args, cfg, out, log) -> bool:
    rep = harness.run_needle(_needle_base(args, cfg), strategies=_opt(args, cfg, "strategies", ["uniform"]),
                             scales=_opt(args, cfg, "scales", ["full", "decayed_only"]),
                             trials=_opt(args, cfg, "trials", 1), logger=log)
    rep.to_csv(out / "needle_aggregate.csv", "aggregate")
    return _finish(rep, out, log, "needle.csv")


def cmd_compare(args, cfg, out, log) -> bool:
    rep = harness.compare_strategies(_needle_base(args, cfg),
                                     strategies=_opt(args, cfg, "strategies",
                                                     ["random", "uniform", "keyframe", "question_guided"]),
                                     trials=_opt(args, cfg, "trials", 1), logger=log)
    return _finish(rep, out, log, "compare.csv", "aggregate")


def cmd_sweep(args, cfg, out, log) -> bool:
    ratios = cfg.get("ratios", [str(r) for r in harness.SWEEP_RATIOS])
    rep = harness.ratio_sweep(_needle_base(args, cfg), ratios=ratios, trials=_opt(args, cfg, "trials", 1), logger=log)
    return _finish(rep, out, log, "sweep.csv", "aggregate")


def _read_valid(path, log):
    report = dataprep.validate_records(dataprep.read_jsonl(path))
    log({"event": "validate", **report.summary()})
    return report.accepted, report


def cmd_pack(args, cfg, out, log) -> bool:
    accepted, vreport = _read_valid(args.input, log)
    qa = [r for r in accepted if r["type"] == "qa"]
    convs = dataprep.pack_conversations(qa, cfg.get("max_turns", 5), args.seed or 0)
    dataprep.write_jsonl(out / "conversations.jsonl", (c.to_dict() for c in convs))
    dataprep.write_jsonl(out / "rejected.jsonl", ({"line": n, "reason": r} for n, r in vreport.rejected))
    packed = sorted(json.dumps(t.to_dict(), sort_keys=True) for c in convs for t in c.turns)
    checks = {"partition": packed == sorted(json.dumps(q, sort_keys=True) for q in qa),
              "turns<=5": all(1 <= len(c.turns) <= 5 for c in convs)}
    log({"event": "checks", "conversations": len(convs), **checks})
    return all(checks.values())


def cmd_stats(args, cfg, out, log) -> bool:
    accepted, _ = _read_valid(args.input, log)
    stats = dataprep.dataset_stats(accepted)
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True), encoding="utf-8")
    edges = stats["duration_edges_s"]
    with open(out / "duration_hist.csv", "w", encoding="utf-8") as fh:
        fh.write("bucket_start_s,bucket_end_s,count\n")
        for lo, hi, c in zip(edges, edges[1:], stats["duration_counts"]):
            fh.write(f"{lo:g},{hi:g},{c}\n")
    with open(out / "event_hist.csv", "w", encoding="utf-8") as fh:
        fh.write("events,count\n")
        for k, c in stats["event_counts"].items():
            fh.write(f"{k},{c}\n")
    checks = {"topic_partition": sum(stats["topic_counts"].values()) == stats["qa"],
              "duration_histogram_complete": sum(stats["duration_counts"]) == stats["videos"]}
    log({"event": "checks", **checks})
    return all(checks.values())


COMMANDS = {
    "gradcheck": cmd_gradcheck, "encode": cmd_encode, "compress": cmd_compress, "token-count": cmd_token_count,
    "needle": cmd_needle, "compare": cmd_compare, "sweep": cmd_sweep, "pack": cmd_pack, "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    parser = argparse.ArgumentParser(prog="hourmem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "token-count":
            sp.add_argument("--seconds", type=int, nargs="+")
        if name in ("encode", "compress"):
            sp.add_argument("--frames", type=int)
        if name == "encode":
            sp.add_argument("--plant", nargs="+", help="frame:marker pairs")
        if name == "compress":
            sp.add_argument("--temporal-strategy", dest="temporal_strategy")
        if name in ("needle", "compare", "sweep"):
            sp.add_argument("--trials", type=int)
        if name in ("needle", "compare"):
            sp.add_argument("--strategies", nargs="+")
        if name == "needle":
            sp.add_argument("--scales", nargs="+")
        if name == "gradcheck":
            sp.add_argument("--seeds", type=int, nargs="+")
        if name in ("pack", "stats"):
            sp.add_argument("input", help="JSON-lines records")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log = RunLog(out / "run_log.jsonl", args.command)
    log({"event": "start", "argv": list(sys.argv[1:] if argv is None else argv), "config": cfg})
    try:
        ok = COMMANDS[args.command](args, cfg, out, log)
        log({"event": "end", "passed": bool(ok)})
    finally:
        log.close()
    print(f"{args.command}: {'ok' if ok else 'FAILED'} (outputs in {out})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
