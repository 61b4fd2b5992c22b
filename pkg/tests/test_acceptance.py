"""Primary acceptance criteria, one test each.

Every test prints a ``PASS``/``FAIL`` line with the measured values; the
lines are also repeated in the pytest terminal summary.  Runtime limits are
part of each criterion.  For the training criteria the runtime is the summed
wall clock of the training runs involved.
"""

import time
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES
from hourmem.dataprep import REASONS, pack_conversations, rejection_reason, synthetic_qa, synthetic_video
from hourmem.encode import FeatureSequence, QuestionSequence
from hourmem.forget import (ForgetConfig, apply_forgetting, clamp_frame_budget, spatial_select,
                            temporal_select_keyframe, temporal_select_question)
from hourmem.harness import gradcheck_suite, memory_scale_trend, run_needle, token_count
from hourmem.memaug import MemAugConfig, MemAugStack, memaug_forward, sinusoidal_encoding
from hourmem.memory import build_memory
from hourmem.pipeline import NeedleConfig
from hourmem.tensor import Tensor


def report(name: str, ok: bool, runtime: float, limit: float, detail: str) -> None:
    ok_all = ok and runtime < limit
    line = f"{'PASS' if ok_all else 'FAIL'}  {name}: {detail}; runtime {runtime:.2f}s (limit {limit:g}s)"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
    assert runtime < limit, line


def test_spatial_count_reproduction():
    t0 = time.perf_counter()
    kept = spatial_select(27 * 27, Fraction(1, 4), "uniform")
    dt = time.perf_counter() - t0
    report("spatial count", len(kept) == 196, dt, 1, f"27x27 grid at 1/4 keeps {len(kept)} tokens (want 196)")


def test_joint_compression_reproduction():
    t0 = time.perf_counter()
    fractions = []
    for frames in (128, 400, 2048):          # clamp inactive: frames/4 in [32, 512]
        seq = FeatureSequence(Tensor(np.random.default_rng(frames).standard_normal((frames, 64, 4))),
                              np.arange(frames))
        plan, decayed = apply_forgetting(seq, None, ForgetConfig("uniform", "1/4", "uniform", "1/4"))
        fractions.append(decayed.tokens.shape[0] * decayed.tokens.shape[1] / (frames * 64))
    dt = time.perf_counter() - t0
    report("joint compression", all(f == 0.0625 for f in fractions), dt, 1,
           f"retained fractions {fractions} (want exactly 0.0625)")


def test_token_budget_reproduction():
    t0 = time.perf_counter()
    seconds = (20, 60, 128, 2000, 3000, 3600)
    got = {t: token_count("hour_llava", t) for t in seconds}
    want = {t: clamp_frame_budget(t, Fraction(1, 4), 32, 512) * 16 for t in seconds}
    frames = {t: got[t] // 16 for t in seconds}
    ok = got == want and frames[60] == 32 and frames[3000] == frames[3600] == 512 and frames[2000] == 500
    ok = ok and all(got[t] <= token_count("vanilla_1fps", t) for t in seconds)
    dt = time.perf_counter() - t0
    report("token budget", ok, dt, 1, f"hour_llava tokens {got}")


def test_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(200):
        frames = int(rng.integers(2, 13))
        tokens = rng.standard_normal((frames, int(rng.integers(1, 5)), int(rng.integers(2, 6))))
        question = rng.standard_normal((int(rng.integers(1, 4)), tokens.shape[2]))
        retained = int(rng.integers(1, frames + 1))
        seq = FeatureSequence(Tensor(tokens), np.arange(frames))
        q = QuestionSequence(np.arange(len(question)), Tensor(question))
        k_ok = temporal_select_keyframe(seq, retained, k=8).tolist() == \
            oracles.keyframe_select(tokens.tolist(), retained, 8)
        q_ok = temporal_select_question(seq, q, retained).tolist() == \
            oracles.question_select(tokens.tolist(), question.tolist(), retained)
        mismatches += (not k_ok) + (not q_ok)
    dt = time.perf_counter() - t0
    report("oracle equivalence", mismatches == 0, dt, 10, f"{mismatches} mismatching selections over 200 sequences")


def test_gradient_suite():
    t0 = time.perf_counter()
    rep = gradcheck_suite(seeds=(0, 1, 2, 3, 4), tol=1e-4, composed=True)
    dt = time.perf_counter() - t0
    worst = max(rep.rows, key=lambda r: r["max_error"])
    failed = [f"{r['case']}@{r['seed']}" for r in rep.rows if not r["passed"]]
    report("gradient suite", rep.passed and len(rep.rows) == 5 * 22, dt, 120,
           f"{len(rep.rows)} checks, worst {worst['case']}@{worst['seed']} err {worst['max_error']:.2e}, "
           f"failed {failed}")


def test_identity_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    seq = FeatureSequence(Tensor(rng.standard_normal((40, 16, 8))), np.arange(40))
    q = QuestionSequence(np.arange(2), Tensor(rng.standard_normal((2, 8))))
    forget_ok = True
    for strategy in ("random", "uniform", "keyframe", "question_guided"):
        cfg = ForgetConfig("uniform", 1, strategy, 1, min_frames=1)
        _, decayed = apply_forgetting(seq, q, cfg)
        forget_ok &= decayed.tokens.data.tobytes() == seq.tokens.data.tobytes()
    plan, decayed = apply_forgetting(seq, q, ForgetConfig("random", "1/4", "uniform", "1/4", min_frames=1))
    stack = MemAugStack.init(MemAugConfig(4, 4, 8), seed=3, zero_output=True)
    aug, q_out = memaug_forward(decayed, q, build_memory(seq, plan), stack)
    times = np.repeat(decayed.timestamps, decayed.tokens.shape[1])
    err = float(np.max(np.abs(aug.data - (decayed.tokens.data.reshape(-1, 8) + sinusoidal_encoding(times, 8)))))
    err_q = float(np.max(np.abs(q_out.data - (q.embeddings.data + sinusoidal_encoding(np.arange(2), 8)))))
    dt = time.perf_counter() - t0
    report("identity / zero-init", forget_ok and max(err, err_q) <= 1e-12, dt, 5,
           f"ratio-1 bit-identical {forget_ok}, zero-init max error {max(err, err_q):.1e}")


@pytest.mark.slow
def test_needle_experiment():
    rep = run_needle(NeedleConfig(), scales=("full", "decayed_only"))
    acc = {r["memory_scale"]: r["accuracy"] for r in rep.rows}
    runtime = sum(r["wall_clock_s"] for r in rep.rows)
    chance = 1 / 32
    ok = acc["full"] >= 0.9 and acc["decayed_only"] <= chance + 0.1 and rep.checks["needle_always_discarded"]
    report("needle experiment", ok, runtime, 15 * 60,
           f"accuracy full {acc['full']:.4f} (want >= 0.9), decayed_only {acc['decayed_only']:.4f} "
           f"(want <= {chance + 0.1:.4f}), needle kept rate {max(r['needle_kept_rate'] for r in rep.rows)}")


@pytest.mark.slow
def test_memory_scale_monotonicity():
    rep = run_needle(NeedleConfig(), scales=("full", "half", "quarter", "decayed_only"), trials=5)
    ok, acc = memory_scale_trend(rep.aggregate)
    runtime = sum(r["wall_clock_s"] for r in rep.rows)
    report("memory-scale monotonicity", ok, runtime, 45 * 60,
           "mean accuracy full/half/quarter/decayed_only = " + "/".join(f"{a:.4f}" for a in acc))


def test_dataprep_partition():
    t0 = time.perf_counter()
    qas = synthetic_qa(10_000, num_videos=900, seed=7)
    convs = pack_conversations(qas, seed=7)
    turns = [t for c in convs for t in c.turns]
    conserved = Counter(turns) == Counter(qas)
    bounded = all(1 <= len(c.turns) <= 5 for c in convs)
    mc = next(q.to_dict() for q in qas if q.format == "MC")
    cases = {
        "event_count<3": synthetic_video("v", num_events=2),
        "duration_out_of_range": synthetic_video("v", duration_s=120),
        "missing_aspects": {**synthetic_video("v"), "clips": [{"start_s": 0, "end_s": 1, "aspects": {}}]},
        "mc_options!=4": {**mc, "options": mc["options"][:3]},
        "unknown_task": {**mc, "task": "lip_reading"},
    }
    codes = {want: rejection_reason(rec) for want, rec in cases.items()}
    codes_ok = all(want == got and got in REASONS for want, got in codes.items())
    dt = time.perf_counter() - t0
    report("data-prep partition", conserved and bounded and codes_ok, dt, 5,
           f"{len(qas)} QAs -> {len(convs)} conversations, conserved {conserved}, turns<=5 {bounded}, "
           f"reason codes {codes}")
