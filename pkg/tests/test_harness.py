from fractions import Fraction

import numpy as np
import pytest

from hourmem.errors import ConfigError
from hourmem.forget import clamp_frame_budget
from hourmem.harness import (ExperimentReport, compare_strategies, gradcheck_suite, memory_scale_trend,
                             primitive_cases, ratio_sweep, run_needle, token_count, token_table, uniform_crossover)
from hourmem.pipeline import NeedleConfig

TINY = NeedleConfig(frames=16, raw_dim=8, raw_grid=(2, 2), pooled_grid=(1, 1), d_model=16, memaug_blocks=1, heads=2,
                    decoder_layers=1, mlp_mult=2, min_frames=4, num_markers=8, amplitude=5.0, steps=3,
                    batch_size=2, eval_probes=8)


@pytest.mark.parametrize("seconds,hour,uni,van", [(3600, 8192, 4096, 230400), (128, 512, 4096, 8192),
                                                  (20, 320, 1280, 1280), (60, 512, 3840, 3840)])
def test_token_count_examples(seconds, hour, uni, van):
    assert token_count("hour_llava", seconds) == hour
    assert token_count("uniform_64", seconds) == uni
    assert token_count("vanilla_1fps", seconds) == van


def test_hour_llava_saturates_and_never_exceeds_vanilla():
    assert {token_count("hour_llava", t) for t in range(2048, 4000, 37)} == {8192}
    for t in range(1, 5000):
        h = token_count("hour_llava", t)
        assert h == clamp_frame_budget(t, Fraction(1, 4)) * 16
        assert h <= token_count("vanilla_1fps", t)


def test_uniform_crossover_both_sides():
    t = uniform_crossover()
    assert t == 1025
    assert token_count("hour_llava", t) <= token_count("uniform_64", t)
    assert token_count("hour_llava", t + 1) > token_count("uniform_64", t + 1)
    assert all(token_count("hour_llava", s) <= token_count("uniform_64", s) for s in range(1, t + 1))
    assert all(token_count("hour_llava", s) > token_count("uniform_64", s) for s in range(t + 1, 4000))


def test_token_table_and_errors():
    rows = token_table([20, 3600])
    assert rows[1] == {"seconds": 3600, "hour_llava": 8192, "uniform_64": 4096, "vanilla_1fps": 230400}
    with pytest.raises(ConfigError):
        token_count("hour_llava", 0)
    with pytest.raises(ConfigError):
        token_count("slowfast", 10)


def test_run_needle_is_deterministic_and_discards():
    a = run_needle(TINY, scales=("full", "decayed_only"))
    b = run_needle(TINY, scales=("full", "decayed_only"))
    assert a.metrics() == b.metrics()
    assert a.checks["needle_always_discarded"] and a.checks["generate_matches_argmax"]
    full, dec = a.rows
    assert full["memory_tokens"] == 16 and dec["memory_tokens"] == dec["decoder_tokens"] == 4
    assert a.config["base"]["seed"] == 0 and a.seeds == [0]


def test_run_needle_rejects_ratio_one():
    with pytest.raises(ConfigError):
        run_needle(TINY.__class__(**{**TINY.to_dict(), "temporal_ratio": 1}))


def test_report_roundtrip(tmp_path):
    rep = run_needle(TINY, scales=("decayed_only",), trials=2)
    assert [a["trials"] for a in rep.aggregate] == [2]
    back = ExperimentReport.from_json(rep.to_json())
    assert back.rows == rep.rows and back.checks == rep.checks
    text = rep.to_csv(tmp_path / "rows.csv")
    assert text.splitlines()[0].startswith("temporal_strategy,memory_scale,seed,accuracy")
    assert (tmp_path / "rows.csv").read_text() == text


def test_memory_scale_trend():
    agg = lambda *v: [{"memory_scale": s, "accuracy_mean": x}
                      for s, x in zip(("full", "half", "quarter", "decayed_only"), v)]
    assert memory_scale_trend(agg(0.9, 0.4, 0.03, 0.03))[0]
    assert memory_scale_trend(agg(0.9, 0.4, 0.03, 0.05))[0]
    assert not memory_scale_trend(agg(0.9, 0.4, 0.03, 0.07))[0]
    assert not memory_scale_trend(agg(0.4, 0.9, 0.03, 0.02))[0]
    assert not memory_scale_trend(agg(0.9, 0.91, 0.03, 0.04))[0]


def test_compare_strategies_fair_and_sorted():
    rep = compare_strategies(TINY)
    assert rep.checks["equal_token_budget"]
    accs = [a["accuracy_mean"] for a in rep.aggregate]
    assert accs == sorted(accs, reverse=True)
    methods = {a["method"] for a in rep.aggregate}
    assert methods == {"random", "uniform", "keyframe", "question_guided", "hour_llava"}
    qg = next(r for r in rep.rows if r["method"] == "question_guided")
    assert qg["needle_kept_rate"] == 1.0


def test_compare_ratio_one_gives_identical_inputs():
    cfg = NeedleConfig(**{**TINY.to_dict(), "temporal_ratio": 1, "enforce_discard": False})
    rep = compare_strategies(cfg, strategies=("random", "uniform", "keyframe"), include_hour_llava=False)
    assert len({a["accuracy_mean"] for a in rep.aggregate}) == 1


def test_ratio_sweep_columns():
    rep = ratio_sweep(TINY)
    assert [r["ratio"] for r in rep.rows] == [1.0, 0.5, 0.25, 0.125, 0.0625]
    assert rep.checks["token_count_non_increasing"]
    assert [r["retained_frames"] for r in rep.rows] == [16, 8, 4, 4, 4]


def test_primitive_cases_cover_every_op():
    names = set(primitive_cases(0))
    assert {"add", "mul", "gelu", "matmul", "softmax", "layer_norm", "cross_entropy", "attention"} <= names


def test_gradcheck_suite_single_seed():
    rep = gradcheck_suite(seeds=(0,))
    assert rep.passed, [r for r in rep.rows if not r["passed"]]
    assert any(r["case"] == "composed_pipeline" for r in rep.rows)
