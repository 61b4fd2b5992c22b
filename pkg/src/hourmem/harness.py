"""Experiment drivers: token-budget accounting, the needle-retrieval runs,
strategy comparisons, ratio sweeps and gradient-check orchestration.

Every driver returns an :class:`ExperimentReport` that embeds its config and
seeds, so rerunning ``report.config`` reproduces ``report.rows``.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable

import numpy as np

from . import tensor as T
from .decoder import DecoderConfig, ToyDecoder, decoder_loss
from .encode import FeatureSequence, FrameStream, Projector, avg_pool_grid, embed_question, project, synth_frames
from .errors import ConfigError
from .forget import ForgetConfig, as_ratio, clamp_frame_budget, plan_forgetting, select_tokens
from .memaug import AttentionParams, MemAugConfig, MemAugStack, attention, memaug_forward
from .memory import build_memory
from .pipeline import NeedleConfig, train_and_eval
from .tensor import Param, Tensor, grad_check

# --- token budgets -----------------------------------------------------------

POLICIES = ("hour_llava", "uniform_64", "vanilla_1fps")


@dataclass(frozen=True)
class TokenPolicy:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in POLICIES:
            raise ConfigError(f"unknown token policy {self.name!r}")


HOUR_LLAVA = TokenPolicy("hour_llava", {"temporal_ratio": Fraction(1, 4), "spatial_ratio": Fraction(1, 4),
                                        "min_frames": 32, "max_frames": 512})
UNIFORM_64 = TokenPolicy("uniform_64", {"frames": 64})
VANILLA = TokenPolicy("vanilla_1fps")
_NAMED = {p.name: p for p in (HOUR_LLAVA, UNIFORM_64, VANILLA)}


def token_count(policy, video_seconds: int, tokens_per_frame: int = 64) -> int:
    """Visual tokens reaching the decoder for a ``video_seconds`` clip at 1 FPS."""
    if isinstance(policy, str):
        policy = _NAMED[policy] if policy in _NAMED else TokenPolicy(policy)
    if video_seconds < 1:
        raise ConfigError("video_seconds must be >= 1")
    p = {**_NAMED[policy.name].params, **policy.params}
    if policy.name == "hour_llava":
        frames = clamp_frame_budget(video_seconds, p["temporal_ratio"], p["min_frames"], p["max_frames"])
        return frames * int(tokens_per_frame * as_ratio(p["spatial_ratio"]))
    if policy.name == "uniform_64":
        return min(video_seconds, p["frames"]) * tokens_per_frame
    return video_seconds * tokens_per_frame


def uniform_crossover(tokens_per_frame: int = 64) -> int:
    """Largest T with hour_llava <= uniform_64, solved from the clamp formula.

    For T >= 64 the fixed policy spends ``64 * tpf`` tokens, so the condition is
    ``round(T/4) * tpf/4 <= 64 * tpf``, i.e. ``round(T/4) <= 256``; with
    round-half-up that holds exactly for ``T/4 < 256.5``.
    """
    kept = 64 * tokens_per_frame // int(tokens_per_frame * HOUR_LLAVA.params["spatial_ratio"])
    # round_half_up(T/4) <= kept  <=>  T < 4*kept + 2
    return 4 * kept + 1


def token_table(seconds, tokens_per_frame: int = 64) -> list[dict]:
    return [{"seconds": t, **{name: token_count(name, t, tokens_per_frame) for name in POLICIES}}
            for t in seconds]


# --- reports -------------------------------------------------------------------

@dataclass
class ExperimentReport:
    name: str
    config: dict
    seeds: list[int]
    rows: list[dict]
    aggregate: list[dict] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)
    wall_clock_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def metrics(self) -> list[dict]:
        """Rows without timing columns, for reproducibility comparisons."""
        return [{k: v for k, v in r.items() if not k.endswith("_s")} for r in self.rows]

    def to_csv(self, path=None, table: str = "rows") -> str:
        data = getattr(self, table)
        cols: list[str] = []
        for r in data:
            cols.extend(k for k in r if k not in cols)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(data)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "config": self.config, "seeds": self.seeds, "rows": self.rows,
                           "aggregate": self.aggregate, "checks": self.checks,
                           "wall_clock_s": self.wall_clock_s}, sort_keys=True, default=_jsonable)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        d = json.loads(text)
        return cls(d["name"], d["config"], d["seeds"], d["rows"], d["aggregate"], d["checks"], d["wall_clock_s"])


def _jsonable(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _mean_std(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0


def needle_config(overrides: dict | None = None, **kw) -> NeedleConfig:
    return replace(NeedleConfig(), **{**(overrides or {}), **kw})


# --- needle experiments --------------------------------------------------------

Logger = Callable[[dict], None]


def _trial(cfg: NeedleConfig, logger: Logger | None, tags: dict) -> dict:
    t0 = time.perf_counter()
    log = None
    if logger is not None:
        def log(rec):
            logger({**tags, **rec})
    res = train_and_eval(cfg, log_every=100 if log else 0, logger=log)
    row = {**tags, "seed": cfg.seed, "accuracy": res.accuracy, "final_loss": res.final_loss,
           "needle_kept_rate": res.needle_kept_rate, "memory_tokens": res.memory_tokens,
           "decoder_tokens": res.decoder_visual_tokens, "generate_agrees": res.generate_agrees,
           "wall_clock_s": round(time.perf_counter() - t0, 3)}
    if logger is not None:
        logger({"event": "trial", **row})
    return row


def _aggregate(rows: list[dict], keys: tuple[str, ...]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, rs in groups.items():
        mean, std = _mean_std([r["accuracy"] for r in rs])
        out.append({**dict(zip(keys, key)), "trials": len(rs), "accuracy_mean": mean, "accuracy_std": std,
                    "decoder_tokens": rs[0]["decoder_tokens"], "memory_tokens": rs[0]["memory_tokens"]})
    return out


def run_needle(base: NeedleConfig | None = None, strategies=("uniform",), scales=("full", "decayed_only"),
               trials: int = 1, frames: int | None = None, needles: int | None = None,
               logger: Logger | None = None) -> ExperimentReport:
    """Train and probe one model per (strategy, memory scale, trial).

    The needle frame is always temporally forgotten; ``needles`` is the number
    of distinct marker classes (chance accuracy ``1/needles``).
    """
    base = base or NeedleConfig()
    over = {"enforce_discard": True}
    if frames is not None:
        over["frames"] = frames
    if needles is not None:
        over["num_markers"] = needles
    base = replace(base, **over)
    t0 = time.perf_counter()
    seeds = [base.seed + i for i in range(trials)]
    rows = []
    for strategy in strategies:
        for scale in scales:
            for seed in seeds:
                cfg = replace(base, temporal_strategy=strategy, memory_scale=scale, seed=seed)
                rows.append(_trial(cfg, logger, {"temporal_strategy": strategy, "memory_scale": scale}))
    agg = _aggregate(rows, ("temporal_strategy", "memory_scale"))
    chance = 1.0 / base.num_markers
    checks = {
        "needle_always_discarded": all(r["needle_kept_rate"] == 0.0 for r in rows),
        "generate_matches_argmax": all(r["generate_agrees"] for r in rows),
    }
    for a in agg:
        if a["memory_scale"] == "decayed_only":
            checks[f"{a['temporal_strategy']}/decayed_only<=chance+0.1"] = a["accuracy_mean"] <= chance + 0.1
    return ExperimentReport("needle", {"base": base.to_dict(), "strategies": list(strategies),
                                       "scales": list(scales), "trials": trials},
                            seeds, rows, agg, checks, round(time.perf_counter() - t0, 3))


def memory_scale_trend(aggregate: list[dict], order=("full", "half", "quarter", "decayed_only"),
                       slack: float = 0.03) -> tuple[bool, list[float]]:
    """Non-increasing accuracy along ``order``, allowing one inversion within ``slack``."""
    by = {a["memory_scale"]: a["accuracy_mean"] for a in aggregate}
    acc = [by[s] for s in order]
    rises = [b - a for a, b in zip(acc, acc[1:]) if b > a]
    ok = not rises or (len(rises) == 1 and rises[0] <= slack)
    return ok, acc


def compare_strategies(base: NeedleConfig | None = None,
                       strategies=("random", "uniform", "keyframe", "question_guided"),
                       memory_scale: str = "decayed_only", include_hour_llava: bool = True,
                       trials: int = 1, logger: Logger | None = None) -> ExperimentReport:
    """Needle accuracy per temporal strategy at one shared token budget.

    The needle lands on a random frame (nothing forces it out), so a strategy
    scores by keeping it.  The question-guided row selects with a question
    embedding aligned to the needle pattern.  With ``include_hour_llava`` an
    extra row runs uniform forgetting with the full memory repository.
    """
    base = replace(base or NeedleConfig(), enforce_discard=False)
    t0 = time.perf_counter()
    seeds = [base.seed + i for i in range(trials)]
    runs = [(s, memory_scale, s == "question_guided", s) for s in strategies]
    if include_hour_llava:
        runs.append(("uniform", "full", False, "hour_llava"))
    rows = []
    for strategy, scale, hint, label in runs:
        for seed in seeds:
            cfg = replace(base, temporal_strategy=strategy, memory_scale=scale, question_hint=hint, seed=seed)
            rows.append(_trial(cfg, logger, {"method": label, "temporal_strategy": strategy, "memory_scale": scale}))
    agg = _aggregate(rows, ("method", "temporal_strategy", "memory_scale"))
    agg.sort(key=lambda a: (-a["accuracy_mean"], a["method"]))
    checks = {"equal_token_budget": len({r["decoder_tokens"] for r in rows}) == 1}
    return ExperimentReport("compare", {"base": base.to_dict(), "strategies": list(strategies),
                                        "memory_scale": memory_scale, "include_hour_llava": include_hour_llava,
                                        "trials": trials},
                            seeds, rows, agg, checks, round(time.perf_counter() - t0, 3))


SWEEP_RATIOS = (Fraction(1), Fraction(1, 2), Fraction(1, 4), Fraction(1, 8), Fraction(1, 16))


def ratio_sweep(base: NeedleConfig | None = None, ratios=SWEEP_RATIOS, trials: int = 1,
                logger: Logger | None = None) -> ExperimentReport:
    """Needle accuracy and decoder token count per temporal ratio, without memory."""
    base = replace(base or NeedleConfig(), enforce_discard=False, memory_scale="decayed_only")
    t0 = time.perf_counter()
    seeds = [base.seed + i for i in range(trials)]
    rows = []
    for r in ratios:
        r = as_ratio(r)
        for seed in seeds:
            cfg = replace(base, temporal_ratio=r, seed=seed)
            row = _trial(cfg, logger, {"ratio": float(r)})
            row["retained_frames"] = clamp_frame_budget(cfg.frames, r, cfg.min_frames, cfg.max_frames)
            rows.append(row)
    agg = _aggregate(rows, ("ratio",))
    tokens = [a["decoder_tokens"] for a in agg]
    checks = {"token_count_non_increasing": all(b <= a for a, b in zip(tokens, tokens[1:]))}
    return ExperimentReport("sweep", {"base": base.to_dict(), "ratios": [str(as_ratio(r)) for r in ratios],
                                      "trials": trials},
                            seeds, rows, agg, checks, round(time.perf_counter() - t0, 3))


# --- gradient checks -----------------------------------------------------------

def _rand_param(rng, shape, name, scale=1.0) -> Param:
    return Param(rng.standard_normal(shape) * scale, name, np.float64)


def _probe(out: Tensor, weights: np.ndarray) -> Tensor:
    return T.tsum(T.mul(out, weights))


def primitive_cases(seed: int = 0) -> dict[str, tuple[Callable[[], Tensor], list[Param]]]:
    """Scalar losses exercising each differentiable primitive on random float64 inputs."""
    rng = np.random.default_rng(seed)
    a = _rand_param(rng, (3, 4), "a")
    b = _rand_param(rng, (3, 4), "b")
    m = _rand_param(rng, (4, 5), "m")
    x3 = _rand_param(rng, (2, 3, 4), "x3")
    bias = _rand_param(rng, (5,), "bias")
    gain = _rand_param(rng, (4,), "gain")
    shift = _rand_param(rng, (4,), "shift")
    table = _rand_param(rng, (6, 4), "table")
    w = {k: rng.standard_normal(s) for k, s in
         (("34", (3, 4)), ("35", (3, 5)), ("234", (2, 3, 4)), ("43", (4, 3)), ("84", (8, 4)), ("3", (3,)),
          ("24", (2, 4)), ("54", (5, 4)), ("14", (1, 4)))}
    ids = np.array([0, 5, 2, 2, 1])
    targets = np.array([1, 3, 0])
    ce_mask = np.array([1.0, 0.0, 1.0])
    heads = 2
    att = AttentionParams(*(_rand_param(rng, (4, 4), f"att.w{k}", 0.5) for k in "qkvo"))
    q_in = _rand_param(rng, (3, 4), "att.q_in")
    kv_in = _rand_param(rng, (5, 4), "att.kv_in")

    return {
        "add": (lambda: _probe(T.add(a, b), w["34"]), [a, b]),
        "add_broadcast": (lambda: _probe(T.add(T.matmul(a, m), bias), w["35"]), [a, m, bias]),
        "sub": (lambda: _probe(T.sub(a, b), w["34"]), [a, b]),
        "mul": (lambda: _probe(T.mul(a, b), w["34"]), [a, b]),
        "gelu": (lambda: _probe(T.gelu(a), w["34"]), [a]),
        "matmul": (lambda: _probe(T.matmul(a, m), w["35"]), [a, m]),
        "matmul_batched": (lambda: _probe(T.matmul(x3, m), rng_fixed(seed, (2, 3, 5))), [x3, m]),
        "linear": (lambda: _probe(T.linear(a, m, bias), w["35"]), [a, m, bias]),
        "reshape": (lambda: _probe(T.reshape(a, (4, 3)), w["43"]), [a]),
        "transpose": (lambda: _probe(T.transpose(a), w["43"]), [a]),
        "concat": (lambda: _probe(T.concat([a, T.mul(b, 2.0), a], axis=0)[:8], w["84"]), [a, b]),
        "index": (lambda: _probe(T.index(x3, (slice(None), 1)), w["24"]), [x3]),
        "take": (lambda: _probe(T.take(a, np.array([2, 0, 2, 1, 0]), axis=0), w["54"]), [a]),
        "gather_rows": (lambda: _probe(T.gather_rows(table, ids), w["54"]), [table]),
        "sum": (lambda: _probe(T.tsum(x3, axis=2), w["34"][:2, :3]), [x3]),
        "mean": (lambda: _probe(T.mean(x3, axis=(0, 2), keepdims=True), w["3"].reshape(1, 3, 1)), [x3]),
        "softmax": (lambda: _probe(T.softmax(x3, axis=1), w["234"]), [x3]),
        "softmax_rows": (lambda: _probe(T.softmax_rows(a), w["34"]), [a]),
        "layer_norm": (lambda: _probe(T.layer_norm(x3, gain, shift), w["234"]), [x3, gain, shift]),
        "cross_entropy": (lambda: T.cross_entropy(a, targets, ce_mask), [a]),
        "attention": (lambda: _probe(attention(q_in, kv_in, kv_in, att, heads), w["34"]),
                      [q_in, kv_in, *att.params()]),
    }


def rng_fixed(seed: int, shape) -> np.ndarray:
    return np.random.default_rng([seed, 99]).standard_normal(shape)


@dataclass(frozen=True)
class TinyConfig:
    frames: int = 6
    raw_dim: int = 4
    grid: tuple[int, int] = (4, 4)
    pooled: tuple[int, int] = (2, 2)
    d_model: int = 8
    heads: int = 2
    vocab: int = 64


def composed_case(seed: int = 0, tiny: TinyConfig = TinyConfig()):
    """encode -> forgetting -> memory -> MemAug (1 block) -> decoder loss, all float64.

    Returns ``(f, params)``; the selection plan is fixed at the base point.
    """
    rng = np.random.default_rng([seed, 7])
    stream = FrameStream(tiny.frames, tiny.raw_dim, tiny.grid, seed=seed, planted=((1, 2),), amplitude=1.0)
    raw = synth_frames(stream)
    proj = Projector.init(tiny.raw_dim, tiny.d_model, seed=seed, dtype=np.float64)
    stack = MemAugStack.init(MemAugConfig(1, tiny.heads, tiny.d_model, 2), seed=seed, zero_output=False)
    for p in stack.params():
        if p.name.endswith("gain") or p.name.endswith("bias"):
            p.data += 0.1 * rng.standard_normal(p.shape)     # break symmetric layer-norm affine
    dec = ToyDecoder.init(DecoderConfig(tiny.vocab, tiny.d_model, 1, tiny.heads, 2), seed=seed)
    fcfg = ForgetConfig("uniform", Fraction(1, 4), "uniform", Fraction(1, 2), min_frames=1, rng_seed=seed)
    q_ids = np.array([2, 4, 3])
    answer = np.array([34, 1])

    def encode() -> FeatureSequence:
        return FeatureSequence(project(avg_pool_grid(raw, tiny.grid, tiny.pooled), proj), np.arange(tiny.frames))

    with T.no_grad():
        plan = plan_forgetting(encode(), None, fcfg)

    def f() -> Tensor:
        seq = encode()
        decayed = select_tokens(seq, plan)
        repo = build_memory(seq, plan, "full")
        q = embed_question(q_ids, dec.embed)
        aug, _ = memaug_forward(decayed, q, repo, stack)
        prefix = T.concat([aug, q.embeddings], axis=0)
        return decoder_loss(dec, prefix, answer)

    return f, proj.params() + stack.params() + dec.params()


def gradcheck_suite(seeds=(0, 1, 2, 3, 4), tol: float = 1e-4, composed: bool = True,
                    max_coords: int | None = 24, logger: Logger | None = None) -> ExperimentReport:
    """Central-difference checks for every primitive and the composed loss, per seed."""
    t0 = time.perf_counter()
    rows = []
    for seed in seeds:
        cases = dict(primitive_cases(seed))
        if composed:
            cases["composed_pipeline"] = composed_case(seed)
        for name, (f, params) in cases.items():
            rep = grad_check(f, params, tol=tol, max_coords=max_coords if name == "composed_pipeline" else None,
                             seed=seed)
            row = {"case": name, "seed": seed, "max_error": rep.max_error, "passed": rep.passed,
                   "worst_param": rep.worst_param, "coords": rep.coords_checked}
            rows.append(row)
            if logger is not None:
                logger({"event": "gradcheck", **row})
    checks = {f"{r['case']}@{r['seed']}": bool(r["passed"]) for r in rows}
    return ExperimentReport("gradcheck", {"seeds": list(seeds), "tol": tol, "max_coords": max_coords},
                            list(seeds), rows, [], checks, round(time.perf_counter() - t0, 3))


__all__ = [
    "POLICIES", "TokenPolicy", "token_count", "uniform_crossover", "token_table", "ExperimentReport",
    "needle_config", "run_needle", "memory_scale_trend", "compare_strategies", "ratio_sweep", "SWEEP_RATIOS",
    "primitive_cases", "composed_case", "gradcheck_suite", "TinyConfig",
]
