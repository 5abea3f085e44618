import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pirtower.chirplet import atom
from pirtower.features import (C60_COLUMNS, CLUTTER_VERDICT, FEATURE_HEADER, FeatureError, FeatureVector,
                               c60_features, energy_features, extract_features, read_feature_csv, rho_max,
                               rho_max_signals, truth_table_inference, truth_table_pattern, write_feature_csv)
from pirtower.scene import Event

N = 1024


def _event(samples, label="human"):
    return Event(np.asarray(samples, dtype=float), label, {})


def _noise_event(seed, n=N):
    return _event(1.65 + 0.1 * np.random.default_rng(seed).normal(size=(8, n)))


def test_constant_signal_has_zero_energy():
    assert not energy_features(_event(np.full((8, N), 1.65))).any()


def test_energy_scales_quadratically():
    ev = _noise_event(0)
    scaled = ev.samples.copy()
    scaled[3] *= 2.0
    e0, e1 = energy_features(ev), energy_features(_event(scaled))
    assert e1[3] == pytest.approx(4 * e0[3], rel=1e-12)
    assert np.array_equal(np.delete(e0, 3), np.delete(e1, 3))


def test_energy_is_centered_sum_of_squares():
    ev = _noise_event(1)
    v = ev.samples
    assert np.allclose(energy_features(ev), [np.sum((x - x.mean()) ** 2) for x in v], rtol=1e-12)


def test_delayed_copy_saturates():
    rng = np.random.default_rng(2)
    inner = rng.normal(size=(2, N - 40))
    inner -= inner.mean(axis=1, keepdims=True)
    # zero-mean pulses padded by zeros, so the shifted copy survives mean removal
    left = [np.concatenate([np.zeros(20), x, np.zeros(20)]) for x in inner]
    right = [np.concatenate([x[5:], np.zeros(5)]) for x in left]  # r(n) = l(n + 5)
    rho, lag = rho_max_signals(left, right)
    assert rho == pytest.approx(1.0, abs=1e-9)
    assert lag == -5


def test_negated_copy_is_bounded():
    rng = np.random.default_rng(3)
    left = [rng.normal(size=N), rng.normal(size=N)]
    rho, _ = rho_max_signals(left, [-x for x in left])
    assert -1.0 <= rho <= 1.0
    assert rho < 0.2  # the zero-lag value is -1, other lags are near 0


def test_white_noise_rho_is_small():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        x = rng.normal(size=(4, N))
        hits += rho_max_signals(x[:2], x[2:])[0] < 0.2
    assert hits >= 99


def test_silent_pair_raises():
    with pytest.raises(FeatureError, match="silent channel pair"):
        rho_max_signals([np.ones(N), np.ones(N)], [np.random.default_rng(0).normal(size=N)] * 2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), scale=st.floats(1e-3, 1e3), offset=st.floats(-5, 5))
def test_rho_bounded_and_scale_invariant(seed, scale, offset):
    x = np.random.default_rng(seed).normal(size=(4, 256))
    x[2] += np.roll(x[0], 7)
    rho, lag = rho_max_signals(x[:2], x[2:])
    rho2, lag2 = rho_max_signals(scale * x[:2] + offset, scale * x[2:] - offset)
    assert -1.0 <= rho <= 1.0
    assert rho2 == pytest.approx(rho, abs=1e-9) and lag2 == lag


def test_rho_max_uses_spot_channels():
    rng = np.random.default_rng(4)
    v = rng.normal(size=(8, N))
    v[6], v[7] = np.roll(v[4], 30), np.roll(v[5], 30)  # R1, R2 lag L1, L2
    assert rho_max(_event(v)) > 0.9
    assert rho_max_signals([v[4], v[5]], [v[6], v[7]])[1] == 30


def test_c60_recovers_known_atom():
    v = np.full((8, N), 1.65)
    v[0] += atom(512, 0.6, 2e-4, 40, np.arange(N)).real
    for k in (1, 2, 3):
        v[k] += 0.01 * np.random.default_rng(k).normal(size=N)
    c60, flags = c60_features(_event(v))
    assert len(c60) == 60 and np.isfinite(c60).all() and not flags
    a, m, w, c, d = c60[:5]
    assert abs(m - 512) <= 1 and abs(w - 0.6) <= 0.01
    assert abs(d - 40) / 40 <= 0.05 and abs(c - 2e-4) / 2e-4 <= 0.05
    assert C60_COLUMNS[:5] == ("A_1_a", "A_1_m", "A_1_omega", "A_1_c", "A_1_d")


def test_empty_channel_gives_zero_block_and_flag():
    v = _noise_event(5).samples
    v[1] = 1.65
    c60, flags = c60_features(_event(v))
    assert flags == ["empty_signal:B"]
    assert not c60[15:30].any() and c60[:15].any()


def test_extract_features_deterministic():
    a = extract_features(_noise_event(6), event_id=3)
    b = extract_features(_noise_event(6), event_id=3)
    assert np.array_equal(a.row(), b.row())
    assert a.row().shape == (69,) and (a.e8 >= 0).all()


@pytest.mark.parametrize("pattern,verdict", [
    ("0001", "short animal at 5 m"), ("0010", "animal at 10 m"), ("0011", "tall animal at 5 m"),
    ("0110", "human at 10 m"), ("0111", "short human at 5 m"), ("1111", "human at 5 m"),
    ("1100", CLUTTER_VERDICT), ("0000", CLUTTER_VERDICT), ("1010", CLUTTER_VERDICT),
])
def test_truth_table(pattern, verdict):
    e8 = np.array([2.0 if b == "1" else 0.5 for b in pattern] + [0.0] * 4)
    assert truth_table_pattern(e8, 1.0) == pattern
    assert truth_table_inference(e8, np.ones(8)) == verdict


def test_truth_table_needs_positive_thresholds():
    with pytest.raises(ValueError):
        truth_table_inference(np.ones(8), 0.0)


def test_feature_csv_round_trip(tmp_path):
    vecs = [FeatureVector(np.arange(8.0) + i, 0.1 * i, np.linspace(0, 1, 60) * i, "human" if i % 2 else "clutter",
                          i, ["flag"] if i == 1 else []) for i in range(3)]
    vecs[2].c60[5] = 1 / 3
    path = tmp_path / "f.csv"
    write_feature_csv(path, vecs, "abc", 7)
    lines = path.read_text().splitlines()
    assert lines[1].split(",") == list(FEATURE_HEADER) and len(FEATURE_HEADER) == 71
    t = read_feature_csv(path)
    assert t.meta["config_hash"] == "abc" and t.meta["seed"] == "7"
    assert t.labels == ["clutter", "human", "clutter"]
    assert np.array_equal(t.event_ids, [0, 1, 2])
    for i, v in enumerate(vecs):
        assert np.array_equal(np.concatenate([t.e8[i], [t.rho[i]], t.c60[i]]), v.row())
    assert t.matrix("e8+rho").shape == (3, 9)


def test_feature_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text(",".join(FEATURE_HEADER) + "\n1,human,1,2\n")
    with pytest.raises(FeatureError, match=r"bad.csv:2"):
        read_feature_csv(p)
    p.write_text("id,label\n")
    with pytest.raises(FeatureError, match="header"):
        read_feature_csv(p)
    with pytest.raises(FeatureError):
        read_feature_csv(tmp_path / "missing.csv")
