import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hourmem import tensor as T
from hourmem.encode import (FeatureSequence, FrameStream, Projector, avg_pool_grid, decode_marker, embed_question,
                            encode_video, marker_probe, needle_pattern, project, synth_frames)
from hourmem.errors import ConfigError, ContractError, DimensionError, VocabularyError
from hourmem.tensor import Param, Tensor, grad_check


def test_synth_frames_deterministic_per_seed():
    s = FrameStream(5, seed=11)
    np.testing.assert_array_equal(synth_frames(s).data, synth_frames(s).data)


@pytest.mark.parametrize("seed", [0, 7, 123])
def test_adjacent_seeds_differ_almost_everywhere(seed):
    a = synth_frames(FrameStream(4, seed=seed)).data
    b = synth_frames(FrameStream(4, seed=seed + 1)).data
    assert np.mean(a != b) >= 0.99


def test_planted_marker_decodes_from_raw_and_pooled():
    s = FrameStream(10, seed=3, planted=((7, 3),))
    raw = synth_frames(s)
    assert decode_marker(raw.data[7]) == 3
    pooled = avg_pool_grid(raw, s.grid, (8, 8))
    assert decode_marker(pooled.data[7]) == 3


def test_probe_accuracy_is_total_on_pooled_features():
    planted = tuple((f, f % 32) for f in range(0, 64, 2))
    s = FrameStream(64, seed=5, planted=planted)
    pooled = avg_pool_grid(synth_frames(s), s.grid, (8, 8)).data
    assert all(decode_marker(pooled[f]) == m for f, m in planted)


def test_needle_pattern_marker_and_beacon_coordinates():
    p = needle_pattern(5, 40, amplitude=2.0, beacon=0.5)
    assert p[5] == 2.0 and np.all(p[32:] == 1.0)
    assert np.count_nonzero(p[:32]) == 1
    assert marker_probe(40).shape == (40, 32)
    q = needle_pattern(1, 8, amplitude=1.0, beacon=1.0)
    np.testing.assert_array_equal(q, [1, 2, 1, 1, 1, 1, 1, 1])


def test_stream_validation():
    with pytest.raises(ConfigError):
        FrameStream(0)
    with pytest.raises(ConfigError):
        FrameStream(4, planted=((4, 0),))
    with pytest.raises(ConfigError):
        FrameStream(4, raw_dim=8, planted=((0, 8),))


def test_pool_examples():
    const = Tensor(np.full((2, 256, 3), 2.5))
    np.testing.assert_array_equal(avg_pool_grid(const, (16, 16)).data, np.full((2, 64, 3), 2.5))
    x = Tensor(np.random.default_rng(0).standard_normal((3, 64, 4)))
    np.testing.assert_array_equal(avg_pool_grid(x, (8, 8)).data, x.data)
    tiny = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1))
    assert avg_pool_grid(tiny, (2, 2), (1, 1)).data.ravel().tolist() == [2.5]


def test_pool_windows_are_spatial_blocks():
    # 4x4 grid of patch ids, values = row*10 + col; the 2x2 windows average neighbours
    grid = (np.arange(4)[:, None] * 10 + np.arange(4)[None, :]).reshape(1, 16, 1).astype(float)
    out = avg_pool_grid(Tensor(grid), (4, 4), (2, 2)).data.ravel()
    np.testing.assert_allclose(out, [5.5, 7.5, 25.5, 27.5])


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([(4, 4, 2, 2), (8, 8, 4, 2), (6, 9, 3, 3), (16, 16, 8, 8)]), st.integers(0, 2 ** 16))
def test_pooling_preserves_frame_mean(dims, seed):
    gh, gw, th, tw = dims
    x = np.random.default_rng(seed).standard_normal((2, gh * gw, 3))
    out = avg_pool_grid(Tensor(x), (gh, gw), (th, tw)).data
    np.testing.assert_allclose(out.mean(axis=1), x.mean(axis=1), atol=1e-12)


def test_pool_rejects_non_divisible_grid():
    with pytest.raises(ConfigError, match="divisible"):
        avg_pool_grid(Tensor(np.zeros((1, 100, 2))), (10, 10), (8, 8))
    with pytest.raises(DimensionError):
        avg_pool_grid(Tensor(np.zeros((1, 10, 2))), (4, 4), (2, 2))


def test_project_zero_map_and_gelu_composition():
    mlp = Projector(Param(np.zeros((4, 6))), Param(np.zeros(6)), Param(np.zeros((6, 3))), Param(np.zeros(3)))
    assert not project(Tensor(np.ones((2, 4))), mlp).data.any()
    eye = Projector(Param(np.eye(4)), Param(np.zeros(4)), Param(np.eye(4)), Param(np.zeros(4)))
    x = np.random.default_rng(1).standard_normal((3, 4))
    np.testing.assert_allclose(project(Tensor(x), eye).data, T.gelu(Tensor(x)).data, rtol=1e-15)


def test_project_width_mismatch():
    with pytest.raises(DimensionError):
        project(Tensor(np.ones((2, 5))), Projector.init(4, 8))


def test_project_grad_check():
    mlp = Projector.init(6, 5, hidden=7, seed=2)
    x = Param(np.random.default_rng(2).standard_normal((3, 6)), "x")
    w = np.random.default_rng(3).standard_normal((3, 5))
    assert grad_check(lambda: T.tsum(T.mul(project(x, mlp), w)), [x, *mlp.params()]).passed


def test_projector_hidden_defaults_to_model_width():
    assert Projector.init(32, 48).w1.shape == (32, 48)


@pytest.mark.parametrize("frames", [1, 12])
def test_encode_video_shapes_and_timestamps(frames):
    seq = encode_video(FrameStream(frames, seed=4), Projector.init(32, 64))
    assert seq.tokens.shape == (frames, 64, 64)
    assert seq.tokens_per_frame == 64
    np.testing.assert_array_equal(seq.timestamps, np.arange(frames))


def test_encode_video_deterministic():
    s, mlp = FrameStream(3, seed=9), Projector.init(32, 16, seed=1)
    np.testing.assert_array_equal(encode_video(s, mlp).tokens.data, encode_video(s, mlp).tokens.data)


def test_feature_sequence_requires_increasing_timestamps():
    with pytest.raises(ContractError):
        FeatureSequence(Tensor(np.zeros((3, 4, 2))), [0, 2, 2])
    with pytest.raises(DimensionError):
        FeatureSequence(Tensor(np.zeros((3, 4, 2))), [0, 1])


def test_embed_question_gather_and_errors():
    table = Param(np.eye(5, 4))
    q = embed_question([0], table)
    np.testing.assert_array_equal(q.embeddings.data, [[1, 0, 0, 0]])
    assert q.num_tokens == 1
    with pytest.raises(ContractError):
        embed_question([], table)
    with pytest.raises(VocabularyError, match="7"):
        embed_question([1, 7], table)


def test_embed_question_gradient_reaches_used_rows_only():
    table = Param(np.random.default_rng(0).standard_normal((6, 3)), "table")
    ids = [1, 4, 1]
    assert grad_check(lambda: T.tsum(embed_question(ids, table).embeddings), [table]).passed
    T.tsum(embed_question(ids, table).embeddings).backward()
    np.testing.assert_array_equal(table.grad[:, 0], [0, 2, 0, 0, 1, 0])
