import json
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from hourmem.encode import FeatureSequence, QuestionSequence
from hourmem.errors import ConfigError, SelectionError
from hourmem.forget import (ForgetConfig, SelectionPlan, apply_forgetting, clamp_frame_budget, keyframe_scores,
                            plan_forgetting, spatial_select, spatial_stride, temporal_neighbors,
                            temporal_select_keyframe, temporal_select_question, temporal_select_random,
                            temporal_select_uniform)
from hourmem.tensor import Tensor


def seq_from(arr) -> FeatureSequence:
    arr = np.asarray(arr, dtype=float)
    return FeatureSequence(Tensor(arr), np.arange(arr.shape[0]))


def random_seq(frames, tpf=64, d=8, seed=0) -> FeatureSequence:
    return seq_from(np.random.default_rng(seed).standard_normal((frames, tpf, d)))


@pytest.mark.parametrize("total,expected", [(2000, 500), (3000, 512), (60, 32), (20, 20), (32, 32), (33, 32),
                                            (130, 33), (2048, 512), (2050, 512), (1, 1)])
def test_clamp_examples(total, expected):
    assert clamp_frame_budget(total, Fraction(1, 4)) == expected


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10000), st.sampled_from([(1, 1), (1, 2), (1, 4), (1, 8), (3, 16)]))
def test_clamp_matches_integer_oracle_and_band(total, ratio):
    n = clamp_frame_budget(total, Fraction(*ratio))
    assert n == oracles.clamp(total, *ratio)
    if total > 32:
        assert 32 <= n <= 512
    else:
        assert n == total


def test_clamp_rounds_half_up():
    assert clamp_frame_budget(130, "1/4", 1, 512) == 33      # 32.5 -> 33
    assert clamp_frame_budget(6, "1/4", 1, 512) == 2         # 1.5 -> 2
    with pytest.raises(SelectionError):
        clamp_frame_budget(0)


def test_spatial_examples():
    uni = spatial_select(729, Fraction(1, 4), "uniform")
    assert len(uni) == 196
    rows, cols = np.divmod(uni, 27)
    assert set(rows) == set(range(0, 27, 2)) and set(cols) == set(range(0, 27, 2))
    assert len(spatial_select(64, Fraction(1, 4), "uniform")) == 16
    np.testing.assert_array_equal(spatial_select(64, 1, "uniform"), np.arange(64))
    a = spatial_select(64, Fraction(1, 4), "random", seed=5)
    np.testing.assert_array_equal(a, spatial_select(64, Fraction(1, 4), "random", seed=5))
    assert len(a) == 16 and np.all(np.diff(a) > 0)


@pytest.mark.parametrize("ratio,stride", [(1, 1), ("1/2", 2), ("1/4", 2), ("1/9", 3), ("1/10", 4), ("1/16", 4)])
def test_spatial_stride_is_exact_ceiling(ratio, stride):
    assert spatial_stride(ratio) == stride


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.sampled_from(["1", "1/2", "1/4", "1/9", "1/16"]), st.integers(0, 1000))
def test_spatial_strategies_agree_on_count(g, ratio, seed):
    u = spatial_select(g * g, ratio, "uniform")
    r = spatial_select(g * g, ratio, "random", seed)
    assert len(u) == len(r) == len(range(0, g, spatial_stride(ratio))) ** 2
    assert r.min() >= 0 and r.max() < g * g


def test_spatial_rejects_non_square():
    with pytest.raises(ConfigError):
        spatial_select(60, "1/4")


def test_uniform_examples():
    assert temporal_select_uniform(8, 2).tolist() == [0, 4]
    assert temporal_select_uniform(8, 8).tolist() == list(range(8))
    assert temporal_select_uniform(10, 4).tolist() == [0, 2, 5, 7]
    with pytest.raises(SelectionError):
        temporal_select_uniform(4, 5)


def test_random_examples_and_uniformity():
    assert temporal_select_random(8, 8, 3).tolist() == list(range(8))
    np.testing.assert_array_equal(temporal_select_random(20, 5, 9), temporal_select_random(20, 5, 9))
    counts = Counter()
    for seed in range(1000):
        counts.update(temporal_select_random(8, 2, seed).tolist())
    freq = np.array([counts[f] for f in range(8)]) / 1000
    assert np.all(np.abs(freq - 0.25) <= 0.05)
    with pytest.raises(SelectionError):
        temporal_select_random(3, 4)


def test_neighbors_truncate_at_edges_and_prefer_earlier():
    assert temporal_neighbors(0, 20, 8).tolist() == list(range(1, 9))
    assert temporal_neighbors(10, 20, 3).tolist() == [8, 9, 11]
    assert temporal_neighbors(19, 20, 4).tolist() == [15, 16, 17, 18]
    assert temporal_neighbors(2, 4, 8).tolist() == [0, 1, 3]


def test_keyframe_examples():
    same = seq_from(np.ones((8, 4, 3)))
    assert temporal_select_keyframe(same, 2).tolist() == [0, 1]
    frames = np.tile([1.0, 0.0, 0.0], (8, 4, 1))
    frames[5] = [0.0, 1.0, 0.0]
    assert 5 in temporal_select_keyframe(seq_from(frames), 2)
    s = random_seq(6, 4)
    assert temporal_select_keyframe(s, 6).tolist() == list(range(6))


def test_keyframe_zero_norm_counts_warning():
    frames = np.random.default_rng(0).standard_normal((5, 4, 3))
    frames[2] = 0.0
    w = Counter()
    temporal_select_keyframe(seq_from(frames), 2, warnings=w)
    assert w["zero_norm"] > 0


def test_question_examples():
    frames = np.zeros((6, 2, 4))
    for f in range(6):
        frames[f, :, 1 + f % 3] = 1.0
    frames[3] = 0.0
    frames[3, :, 0] = 1.0            # frame 3 is the only one with any e0 component
    seq = seq_from(frames)
    q = QuestionSequence(np.array([0]), Tensor(frames[3, :1]))
    assert temporal_select_question(seq, q, 1).tolist() == [3]
    q7 = QuestionSequence(np.array([0]), Tensor(7.0 * frames[3, :1]))
    assert temporal_select_question(seq, q7, 1).tolist() == [3]


def test_question_scaling_invariance():
    seq = random_seq(20, 4, seed=3)
    emb = np.random.default_rng(4).standard_normal((3, 8))
    base = temporal_select_question(seq, QuestionSequence(np.arange(3), Tensor(emb)), 5)
    scaled_q = temporal_select_question(seq, QuestionSequence(np.arange(3), Tensor(2.5 * emb)), 5)
    scaled_v = temporal_select_question(seq_from(3.0 * seq.tokens.data), QuestionSequence(np.arange(3), Tensor(emb)), 5)
    np.testing.assert_array_equal(base, scaled_q)
    np.testing.assert_array_equal(base, scaled_v)


def test_selection_matches_brute_force_oracles():
    rng = np.random.default_rng(2024)
    for trial in range(200):
        frames = int(rng.integers(2, 13))
        tpf = int(rng.integers(1, 5))
        d = int(rng.integers(2, 6))
        tokens = rng.standard_normal((frames, tpf, d))
        question = rng.standard_normal((int(rng.integers(1, 4)), d))
        retained = int(rng.integers(1, frames + 1))
        seq = seq_from(tokens)
        got_k = temporal_select_keyframe(seq, retained, k=8).tolist()
        assert got_k == oracles.keyframe_select(tokens.tolist(), retained, 8), trial
        q = QuestionSequence(np.arange(len(question)), Tensor(question))
        assert temporal_select_question(seq, q, retained).tolist() == \
            oracles.question_select(tokens.tolist(), question.tolist(), retained), trial


def test_keyframe_scores_match_oracle_values():
    emb = np.random.default_rng(8).standard_normal((11, 5))
    np.testing.assert_allclose(keyframe_scores(emb, 8), oracles.keyframe_scores(emb.tolist(), 8), atol=1e-12)


def test_joint_compression_example():
    seq = random_seq(128, 64, 4, seed=1)
    cfg = ForgetConfig("uniform", "1/4", "uniform", "1/4")
    plan, decayed = apply_forgetting(seq, None, cfg)
    assert decayed.tokens.shape == (32, 16, 4)
    assert plan.num_tokens == 512 and plan.num_tokens / (128 * 64) == 0.0625


@pytest.mark.parametrize("temporal", ["random", "uniform", "keyframe", "question_guided"])
@pytest.mark.parametrize("spatial", ["random", "uniform"])
def test_decayed_tokens_are_exact_row_copies(temporal, spatial):
    seq = random_seq(150, 16, 4, seed=6)
    q = QuestionSequence(np.arange(2), Tensor(np.random.default_rng(1).standard_normal((2, 4))))
    plan, decayed = apply_forgetting(seq, q, ForgetConfig(spatial, "1/4", temporal, "1/4", rng_seed=3))
    full = seq.tokens.data
    for i, f in enumerate(plan.kept_frames):
        for j, s in enumerate(plan.kept_spatial[i]):
            assert np.array_equal(decayed.tokens.data[i, j], full[f, s])
    np.testing.assert_array_equal(decayed.timestamps, seq.timestamps[plan.kept_frames])
    assert len(plan.kept_frames) == clamp_frame_budget(150, "1/4")


@pytest.mark.parametrize("temporal", ["random", "uniform", "keyframe", "question_guided"])
def test_ratio_one_is_identity(temporal):
    seq = random_seq(40, 16, 4, seed=2)
    q = QuestionSequence(np.arange(1), Tensor(np.ones((1, 4))))
    cfg = ForgetConfig("uniform", 1, temporal, 1, min_frames=1, max_frames=512)
    plan, decayed = apply_forgetting(seq, q, cfg)
    assert decayed.tokens.data.tobytes() == seq.tokens.data.tobytes()
    np.testing.assert_array_equal(decayed.timestamps, seq.timestamps)


def test_short_video_keeps_every_frame():
    seq = random_seq(20, 16, 4)
    plan = plan_forgetting(seq, None, ForgetConfig(temporal_strategy="keyframe"))
    assert plan.kept_frames.tolist() == list(range(20))


def test_question_guided_needs_question():
    with pytest.raises(SelectionError):
        plan_forgetting(random_seq(40, 4, 4), None, ForgetConfig(temporal_strategy="question_guided"))


def test_config_validation():
    for bad in ({"spatial_ratio": 0}, {"temporal_ratio": "3/2"}, {"min_frames": 600}, {"k_neighbors": 0},
                {"temporal_strategy": "slowfast"}, {"spatial_strategy": "merge"}):
        with pytest.raises(ConfigError):
            ForgetConfig(**bad)


def test_plan_record_roundtrip():
    seq = random_seq(64, 16, 4)
    plan = plan_forgetting(seq, None, ForgetConfig(rng_seed=12))
    line = plan.to_record("vid-1")
    rec = json.loads(line)
    assert rec["video_id"] == "vid-1" and rec["seed"] == 12 and rec["temporal_strategy"] == "uniform"
    back = SelectionPlan.from_record(line)
    np.testing.assert_array_equal(back.kept_frames, plan.kept_frames)
    assert [s.tolist() for s in back.kept_spatial] == [s.tolist() for s in plan.kept_spatial]


def test_plan_validate_rejects_bad_indices():
    with pytest.raises(SelectionError):
        SelectionPlan([3, 1], [np.arange(2)] * 2, 5, 4).validate()
    with pytest.raises(SelectionError):
        SelectionPlan([0, 1], [np.array([0, 4])] * 2, 5, 4).validate()
    with pytest.raises(SelectionError):
        SelectionPlan([0, 1], [np.arange(2)], 5, 4).validate()
