import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from msvad.features import FeatureConfig, extract
from msvad.mixgen import (
    TURN_CONFIGS,
    CorpusError,
    MixtureSpec,
    NoiseSpec,
    ReverbSpec,
    SyntheticCorpus,
    TurnConfig,
    WavCorpus,
    add_noise,
    apply_causal_relabel,
    apply_reverb,
    cycle_totals,
    derive_frame_labels,
    draw_specs,
    impulse_response,
    load_mixture,
    main_onset,
    pink_noise,
    sample_schedule,
    save_mixture,
    synthesize_mixture,
    white_noise,
    write_wav,
)


@pytest.fixture(scope="module")
def corpus():
    return SyntheticCorpus(n_speakers=6, utterances_per_speaker=3, seed=11)


# -- schedules ----------------------------------------------------------------

def reference_schedule(voice, silence, delay, duration, rng):
    """Independent rewrite of the documented draw order: delay, then voice/silence pairs."""
    out = []
    t = rng.uniform(*delay)
    while t < duration:
        length = rng.uniform(*voice)
        end = min(t + length, duration)
        if out and out[-1][1] == t:
            out[-1] = (out[-1][0], end)
        else:
            out.append((t, end))
        if end >= duration:
            break
        t = end + rng.uniform(*silence)
    return out


def test_b2_schedule_matches_reimplementation():
    for seed in range(20):
        got = sample_schedule("B2", 15.0, np.random.default_rng(seed))
        want = reference_schedule((1, 4), (0, 5), (0, 3), 15.0, np.random.default_rng(seed))
        assert got == want


@pytest.mark.parametrize("name", ["M0", "B1", "B2", "B3", "B4"])
def test_schedule_well_formed(name):
    rng = np.random.default_rng(0)
    for _ in range(200):
        iv = sample_schedule(name, 15.0, rng)
        assert iv and 0 <= iv[0][0] <= 3.0
        for (s, e) in iv:
            assert 0 <= s < e <= 15.0
        for (_, e0), (s1, _) in zip(iv, iv[1:]):
            assert e0 < s1


def test_m0_is_continuous_after_onset():
    iv = sample_schedule("M0", 15.0, np.random.default_rng(3))
    assert len(iv) == 1 and iv[0][1] == 15.0


def test_zero_silence_gives_one_region():
    cfg = TurnConfig("flat", (1.0, 2.0), (0.5, 0.5), (0.0, 0.0))
    iv = sample_schedule(cfg, 15.0, np.random.default_rng(0))
    assert len(iv) == 1 and iv[0][1] == 15.0


def test_schedule_errors():
    with pytest.raises(ValueError):
        sample_schedule("B1", 0.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        TurnConfig("bad", (2.0, 1.0), (1.0, 2.0), (0.0, 1.0))
    TurnConfig("degenerate", (1.0, 1.0), (2.0, 2.0), (1.0, 1.0))


def test_expected_proportions_match_table():
    want = {"B1": 0.400, "B2": 0.500, "B3": 0.625, "B4": 0.833}
    for name, p in want.items():
        assert TURN_CONFIGS[name].expected_voice_proportion == pytest.approx(p, abs=5e-4)
    assert TURN_CONFIGS["M0"].silence_dur is None


def test_cycle_totals():
    assert cycle_totals([(1.0, 3.0), (4.0, 5.0), (9.0, 10.0)]) == (3.0, 8.0)
    assert cycle_totals([(0.0, 15.0)]) == (0.0, 0.0)


# -- mixtures ---------------------------------------------------------------------

def test_mixture_shapes_and_volumes(corpus):
    spec = MixtureSpec(duration=4.0, n_speakers=3, main_index=1, rng_seed=5)
    mix = synthesize_mixture(spec, corpus)
    n_frames = extract(mix.waveform).frames.shape[0]
    assert mix.labels.shape == (n_frames, 2) == mix.loss_mask.shape
    assert mix.waveform.shape == (32000,) and np.all(np.isfinite(mix.waveform))
    assert mix.volumes[1] == 1.0
    assert all(0.2 <= v <= 0.8 for i, v in enumerate(mix.volumes) if i != 1)
    assert set(np.unique(mix.labels)) <= {0, 1}


def test_volumes_strictly_positive(corpus):
    for spec in draw_specs(30, 0, n_speakers=2, volume_range=(1e-6, 0.01), duration=2.0):
        mix = synthesize_mixture(spec, corpus, keep_sources=False)
        assert mix.volumes[1 - spec.main_index] > 0


def test_invalid_specs():
    with pytest.raises(ValueError):
        MixtureSpec(n_speakers=5)
    with pytest.raises(ValueError):
        MixtureSpec(volume_range=(0.0, 0.5))
    with pytest.raises(ValueError):
        MixtureSpec(main_index=2, n_speakers=2)


def test_not_enough_speakers():
    with pytest.raises(CorpusError):
        synthesize_mixture(MixtureSpec(n_speakers=4), SyntheticCorpus(n_speakers=3))


def test_silent_background_additive_identity(corpus):
    silent = TurnConfig("silent", (20.0, 20.0), (1.0, 1.0), (0.0, 0.0))
    spec = MixtureSpec(duration=3.0, n_speakers=2, main_index=0, turn_config=silent, rng_seed=9)
    mix = synthesize_mixture(spec, corpus)
    assert not np.any(mix.sources[1])
    np.testing.assert_array_equal(mix.waveform, mix.sources[0])
    assert not mix.labels[:, 1].any()


def test_mixture_deterministic(corpus):
    spec = MixtureSpec(duration=3.0, n_speakers=3, rng_seed=123, noise=NoiseSpec("pink", (5, 15)),
                       reverb=ReverbSpec())
    a = synthesize_mixture(spec, corpus)
    b = synthesize_mixture(spec, SyntheticCorpus(n_speakers=6, utterances_per_speaker=3, seed=11))
    assert a.waveform.tobytes() == b.waveform.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_labels_reconstructible(corpus):
    for spec in draw_specs(5, 1, duration=5.0, n_speakers=(2, 4)):
        mix = synthesize_mixture(spec, corpus)
        again = derive_frame_labels(mix.sources, spec.main_index, mix.frame_hop, spec.energy_floor_db,
                                    spec.sample_rate, n_frames=mix.n_frames, intervals=mix.intervals)
        np.testing.assert_array_equal(again, mix.labels)


def test_main_onset_matches_schedule(corpus):
    mix = synthesize_mixture(MixtureSpec(duration=6.0, rng_seed=4), corpus)
    start = mix.intervals[mix.spec.main_index][0][0]
    assert abs(mix.onset_frame * 0.03 - start) < 0.1
    assert mix.onset_frame == main_onset(mix.labels)


# -- labels ------------------------------------------------------------------------

def test_all_silent_labels():
    assert not derive_frame_labels([np.zeros(2400)] * 3, 0).any()


def test_single_background_frames():
    s = np.zeros(30 * 240)
    s[10 * 240:21 * 240] = np.random.default_rng(0).standard_normal(11 * 240)
    labels = derive_frame_labels([np.zeros_like(s), s], 0)
    np.testing.assert_array_equal(np.flatnonzero(labels[:, 1]), np.arange(10, 21))
    assert not labels[:, 0].any()


def brute_force_labels(streams, intervals, main_index, hop=240, floor_db=40.0, sr=8000):
    n = len(streams[0])
    T = -(-n // hop)
    out = np.zeros((T, 2), dtype=np.uint8)
    for k, s in enumerate(streams):
        idx = [i for a, b in intervals[k] for i in range(int(round(a * sr)), int(round(b * sr)))]
        if not idx:
            continue
        ref = np.sqrt(np.mean(np.asarray(s)[idx] ** 2))
        if ref == 0:
            continue
        in_support = set(idx)
        for j in range(T):
            seg = s[j * hop:min((j + 1) * hop, n)]
            rms = np.sqrt(np.mean(seg ** 2))
            touches = any(i in in_support for i in range(j * hop, min((j + 1) * hop, n)))
            if touches and rms > ref * 10 ** (-floor_db / 20):
                out[j, 0 if k == main_index else 1] = 1
    return out


def test_background_or_brute_force():
    rng = np.random.default_rng(1)
    n, sr = 2 * 8000, 8000
    intervals = [[(0.2, 1.8)], [(0.1, 0.9)], [(0.6, 1.5)], [(1.2, 1.9)]]
    streams = []
    for sched in intervals:
        s = np.zeros(n)
        for a, b in sched:
            s[int(a * sr):int(b * sr)] = rng.standard_normal(int(b * sr) - int(a * sr)) * rng.uniform(0.1, 1)
        streams.append(s)
    got = derive_frame_labels(streams, 0, intervals=intervals)
    np.testing.assert_array_equal(got, brute_force_labels(streams, intervals, 0))
    per = [derive_frame_labels([streams[0], s], 0, intervals=[intervals[0], iv])[:, 1]
           for s, iv in zip(streams[1:], intervals[1:])]
    np.testing.assert_array_equal(got[:, 1], np.bitwise_or.reduce(per))


def test_energy_gate_drops_quiet_frames():
    s = np.zeros(20 * 240)
    s[:10 * 240] = 1.0
    s[10 * 240:] = 1e-4
    labels = derive_frame_labels([s, np.zeros_like(s)], 0, intervals=[[(0.0, 0.6)], []])
    assert labels[:10, 0].all() and not labels[10:, 0].any()


# -- causal relabel ------------------------------------------------------------------

def relabel_oracle(labels, mask, onset):
    lab, msk = labels.copy(), mask.copy()
    for t in range(labels.shape[0]):
        if t < onset:
            lab[t, 0] = labels[t, 1]
            msk[t, 1] = 0
    return lab, msk


def test_relabel_example():
    labels = np.zeros((20, 2), dtype=np.uint8)
    labels[:10, 1] = 1
    labels[10:, 0] = 1
    lab, msk = apply_causal_relabel(labels, np.ones_like(labels), 10)
    assert lab[:10, 0].all() and not msk[:10, 1].any()
    np.testing.assert_array_equal(lab[10:], labels[10:])
    assert msk[10:].all()


def test_relabel_identity_at_zero_onset():
    labels = np.random.default_rng(0).integers(0, 2, (15, 2)).astype(np.uint8)
    lab, msk = apply_causal_relabel(labels, np.ones_like(labels), 0)
    np.testing.assert_array_equal(lab, labels)
    assert msk.all()


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 40), st.just(2)), elements=st.integers(0, 1)),
       st.integers(0, 45))
def test_relabel_oracle_and_idempotence(labels, onset):
    mask = np.ones_like(labels)
    lab, msk = apply_causal_relabel(labels, mask, onset)
    want_lab, want_msk = relabel_oracle(labels, mask, onset)
    np.testing.assert_array_equal(lab, want_lab)
    np.testing.assert_array_equal(msk, want_msk)
    lab2, msk2 = apply_causal_relabel(lab, msk, onset)
    np.testing.assert_array_equal(lab2, lab)
    np.testing.assert_array_equal(msk2, msk)
    np.testing.assert_array_equal(lab[onset:], labels[onset:])


# -- reverb and noise -------------------------------------------------------------------

def test_reverb_identity_kernel():
    x = np.random.default_rng(0).standard_normal(500)
    np.testing.assert_allclose(apply_reverb(x, ReverbSpec(), None, response=np.array([1.0])), x, atol=1e-12)


def test_reverb_zero_input():
    assert not np.any(apply_reverb(np.zeros(300), ReverbSpec(), np.random.default_rng(0)))


def test_reverb_matches_direct_convolution():
    x = np.random.default_rng(1).standard_normal(3000)
    spec = ReverbSpec(decay=0.05, taps=10)
    h = impulse_response(spec, 8000, np.random.default_rng(7))
    assert h[0] == 1.0 and np.count_nonzero(h[1:]) <= 10
    y = np.convolve(x, h)[:x.size]
    y *= np.abs(x).max() / np.abs(y).max()
    got = apply_reverb(x, spec, np.random.default_rng(7))
    np.testing.assert_allclose(got, y, rtol=1e-6, atol=1e-9 * np.abs(y).max())
    assert np.abs(got).max() == pytest.approx(np.abs(x).max())


def test_noise_none_is_identity():
    x = np.random.default_rng(2).standard_normal(100)
    np.testing.assert_array_equal(add_noise(x, None, 10.0, None), x)
    np.testing.assert_array_equal(add_noise(x, white_noise, np.inf, np.random.default_rng(0)), x)


def test_noise_unit_power_zero_db():
    t = np.arange(8000)
    x = np.sqrt(2) * np.sin(2 * np.pi * 50 * t / 8000)  # power exactly 1 over whole periods
    out = add_noise(x, white_noise, 0.0, np.random.default_rng(3))
    assert np.mean((out - x) ** 2) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("source", [white_noise, pink_noise])
@pytest.mark.parametrize("snr", [-5.0, 0.0, 12.5, 30.0])
def test_measured_snr(source, snr):
    x = np.random.default_rng(4).standard_normal(16000) * 0.3
    noise = add_noise(x, source, snr, np.random.default_rng(5)) - x
    measured = 10 * np.log10(np.mean(x ** 2) / np.mean(noise ** 2))
    assert abs(measured - snr) < 0.1


def test_noise_zero_signal_raises():
    with pytest.raises(ValueError):
        add_noise(np.zeros(10), white_noise, 10.0, np.random.default_rng(0))


def test_short_noise_array_is_looped():
    x = np.ones(100)
    out = add_noise(x, np.array([1.0, -1.0, 0.5]), 0.0, None)
    assert out.shape == x.shape


# -- I/O ------------------------------------------------------------------------------------

def test_save_load_round_trip(tmp_path, corpus):
    mix = synthesize_mixture(MixtureSpec(duration=2.0, rng_seed=2, noise=NoiseSpec("white", 15.0)), corpus)
    wav = save_mixture(mix, tmp_path, "m0")
    meta = json.loads(wav.with_suffix(".json").read_text())
    assert {"frame_hop", "labels", "loss_mask", "onset_frame", "spec"} <= set(meta)
    back = load_mixture(wav)
    np.testing.assert_array_equal(back.labels, mix.labels)
    assert back.spec == mix.spec
    np.testing.assert_allclose(back.waveform, mix.waveform * meta["gain"], atol=1 / 32767)
    assert back.waveform.shape[0] == mix.waveform.shape[0]


def test_wav_corpus_manifest(tmp_path):
    rng = np.random.default_rng(0)
    lines = []
    for spk in ("a", "b"):
        for i in range(2):
            write_wav(tmp_path / f"{spk}{i}.wav", rng.standard_normal(16000) * 0.1, 16000)
            lines.append(f"{spk} {spk}{i}.wav")
    (tmp_path / "list.txt").write_text("\n".join(lines) + "\n")
    wc = WavCorpus(tmp_path / "list.txt", 8000)
    assert wc.speakers() == ["a", "b"] and wc.n_utterances("a") == 2
    utt = wc.utterance("b", 1)
    assert utt.shape == (8000,)
    assert np.sqrt(np.mean(utt.astype(np.float64) ** 2)) == pytest.approx(0.1, rel=1e-3)
    mix = synthesize_mixture(MixtureSpec(duration=5.0, rng_seed=1), wc)
    assert mix.labels[:, 0].any()


def test_corpus_pickles(corpus):
    import pickle

    clone = pickle.loads(pickle.dumps(corpus))
    np.testing.assert_array_equal(clone.utterance(corpus.speakers()[0], 1),
                                  corpus.utterance(corpus.speakers()[0], 1))


def test_label_frames_match_features(corpus):
    for dur in (2.0, 3.01, 15.0):
        mix = synthesize_mixture(MixtureSpec(duration=dur, rng_seed=3), corpus, keep_sources=False)
        assert mix.n_frames == extract(mix.waveform, FeatureConfig()).frames.shape[0]
