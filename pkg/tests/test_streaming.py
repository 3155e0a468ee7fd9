from dataclasses import replace

import numpy as np
import pytest

from msvad.cli import infer_file
from msvad.features import OnlineFeatureExtractor, extract
from msvad.mixgen import write_wav
from msvad.model import PRESETS, init_params, predict
from msvad.streaming import StreamError, init_stream, push_frame, push_samples, stream_probs, stream_wav
from msvad.training import load_checkpoint, save_params


def make_ckpt(tmp_path, mode="dual", causal=True, input_dim=14, seed=0, pos_encoding=True, name="m.npz"):
    cfg = replace(PRESETS["tiny"], input_dim=input_dim, causal=causal, attractor_mode=mode,
                  saa_heads=2 if mode == "single" else 4, pos_encoding=pos_encoding)
    params = init_params(cfg, seed, dtype=np.float64)
    path = tmp_path / name
    save_params(path, params, cfg)
    return path, cfg, params


@pytest.mark.parametrize("mode", ["single", "dual"])
def test_first_frame_matches_offline(tmp_path, mode):
    path, cfg, params = make_ckpt(tmp_path, mode)
    x = np.random.default_rng(0).standard_normal((1, cfg.input_dim))
    d = push_frame(init_stream(path), x[0])
    np.testing.assert_allclose([d.p_main, d.p_background], predict(x, cfg, params)[0], atol=1e-12)
    assert d.t == 0 and d.t_seconds == 0.0


@pytest.mark.parametrize("mode", ["single", "dual"])
@pytest.mark.parametrize("pe", [True, False])
def test_stream_matches_offline_causal(tmp_path, mode, pe):
    path, cfg, params = make_ckpt(tmp_path, mode, pos_encoding=pe, seed=1)
    x = np.random.default_rng(1).standard_normal((50, cfg.input_dim))
    np.testing.assert_allclose(stream_probs(init_stream(path), x), predict(x, cfg, params), atol=1e-5)


def test_per_frame_cost_grows_linearly(tmp_path):
    path, cfg, _ = make_ckpt(tmp_path)
    state = init_stream(path)
    x = np.random.default_rng(2).standard_normal((101, cfg.input_dim))
    cost = []
    for row in x:
        before = state.attention_macs
        push_frame(state, row)
        cost.append(state.attention_macs - before)
    # pushing frame t attends over t + 1 cached rows, no recomputation of the prefix
    assert cost[100] / cost[10] == pytest.approx(101 / 11)


def test_state_size_linear_in_frames(tmp_path):
    path, cfg, _ = make_ckpt(tmp_path)
    state = init_stream(path)
    x = np.random.default_rng(3).standard_normal((60, cfg.input_dim))
    sizes = []
    for row in x:
        push_frame(state, row)
        sizes.append(state.state_nbytes)
    per_frame = sizes[0]
    assert sizes == [per_frame * (t + 1) for t in range(60)]


def test_noncausal_checkpoint_rejected(tmp_path):
    path, _, _ = make_ckpt(tmp_path, causal=False)
    with pytest.raises(StreamError):
        init_stream(path)


def test_empty_push_gives_nothing(tmp_path):
    path, _, _ = make_ckpt(tmp_path, input_dim=161)
    state = init_stream(path)
    assert push_samples(state, np.zeros(0)) == []
    assert state.t == 0
    # fewer samples than one analysis window: still nothing
    assert push_samples(state, np.zeros(100)) == []


def test_wrong_frame_size_rejected(tmp_path):
    path, cfg, _ = make_ckpt(tmp_path)
    with pytest.raises(ValueError):
        push_frame(init_stream(path), np.zeros(cfg.input_dim + 1))


def test_poisoned_state_refuses_more_frames(tmp_path):
    path, cfg, _ = make_ckpt(tmp_path)
    state = init_stream(path)
    push_frame(state, np.zeros(cfg.input_dim))
    state.params["enc.in.w"] = state.params["enc.in.w"][:, :3]
    with pytest.raises(Exception):
        push_frame(state, np.zeros(cfg.input_dim))
    with pytest.raises(StreamError):
        push_frame(state, np.zeros(cfg.input_dim))


def test_prefix_determinism(tmp_path):
    path, cfg, _ = make_ckpt(tmp_path, seed=4)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((30, cfg.input_dim))
    y = np.concatenate([x[:20], rng.standard_normal((10, cfg.input_dim))])
    a, b = stream_probs(init_stream(path), x), stream_probs(init_stream(path), y)
    np.testing.assert_array_equal(a[:20], b[:20])
    np.testing.assert_array_equal(a, stream_probs(init_stream(path), x))


def test_threshold_decisions(tmp_path):
    path, cfg, _ = make_ckpt(tmp_path)
    x = np.random.default_rng(5).standard_normal((10, cfg.input_dim))
    for thr in (0.0, 0.5, 1.01):
        state = init_stream(path, threshold=thr)
        for row in x:
            d = push_frame(state, row)
            assert d.is_main_active == (d.p_main >= thr) and d.is_bg_active == (d.p_background >= thr)


def test_stream_wav_matches_offline_inference(tmp_path):
    path, cfg, _ = make_ckpt(tmp_path, input_dim=161, seed=6)
    audio = np.random.default_rng(6).standard_normal(8000 * 3) * 0.1
    wav = tmp_path / "clip.wav"
    write_wav(wav, audio, 8000)
    decisions, summary = stream_wav(wav, path, chunk_seconds=0.07)
    pred, rttm, feats = infer_file(wav, load_checkpoint(path))
    streamed = np.array([[d.p_main, d.p_background] for d in decisions])
    assert len(decisions) == summary["frames"] == feats.frames.shape[0] == 100
    np.testing.assert_allclose(streamed, np.array(pred["probs"]), atol=1e-5)
    assert summary["rttm"] == rttm
    assert [d.t for d in decisions] == list(range(100))


def test_online_features_feed_stream(tmp_path):
    path, cfg, params = make_ckpt(tmp_path, input_dim=161, seed=7)
    audio = np.random.default_rng(7).standard_normal(8000) * 0.1
    state = init_stream(path)
    out = []
    for i in range(0, audio.size, 333):
        out.extend(push_samples(state, audio[i:i + 333]))
    offline = predict(extract(audio, causal=True).frames.astype(np.float64), cfg, params)
    np.testing.assert_allclose([[d.p_main, d.p_background] for d in out], offline, atol=1e-5)
    assert isinstance(state.features, OnlineFeatureExtractor)


def test_missing_wav_is_stream_error(tmp_path):
    path, _, _ = make_ckpt(tmp_path, input_dim=161)
    with pytest.raises(StreamError):
        stream_wav(tmp_path / "absent.wav", path)
