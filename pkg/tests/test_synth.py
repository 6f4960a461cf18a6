import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdsovnet import synth as S
from pdsovnet.errors import ConfigError
from pdsovnet.physbranch import PhysConfig
from pdsovnet.preprocess import N_ORDER, build_dataset, profile_to_order_labels

THETA = 2 * np.pi * np.arange(400) / 400
SMALL = dict(n_per_group=4)


def _truth(**kw):
    args = dict(centers=[10.0], dampings=[0.1], gains=[1.0], coupling=np.eye(4))
    args.update(kw)
    return S.TruthModel(**args)


def _flat_profile(db=20.0, **kw):
    return S.GroupProfile(np.full((N_ORDER, 4), db), **kw)


# ---------------------------------------------------------------------------
# roughness spectra


def test_zero_spread_is_deterministic_mean():
    amp = S.sample_roughness_spectrum(np.random.default_rng(0), _flat_profile(20.0, spread_db=0.0))
    np.testing.assert_allclose(amp, 1e-3 * 10.0, rtol=1e-12)


def test_emphasized_order_is_boosted():
    prof = _flat_profile(20.0, spread_db=0.0, emphasized=(17,), boost=(10.0, 10.0))
    amp = S.sample_roughness_spectrum(np.random.default_rng(0), prof)
    np.testing.assert_allclose(amp[16], 10 * amp[15], rtol=1e-12)


def test_monte_carlo_means():
    spread, rng = 6.0, np.random.default_rng(1)
    prof = S.GroupProfile(np.linspace(10, 30, N_ORDER)[:, None] * np.ones(4), spread_db=spread)
    draws = np.stack([S.sample_roughness_spectrum(rng, prof) for _ in range(1000)])
    # log-uniform in dB: E[10^(s u / 20)] for u ~ U(-1, 1)
    a = spread * np.log(10) / 20
    expected = 1e-3 * 10 ** (prof.mean_db / 20) * np.sinh(a) / a
    se = draws.std(axis=0) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - expected) < 3 * se)


def test_amplitudes_strictly_positive():
    amp = S.sample_roughness_spectrum(np.random.default_rng(2), _flat_profile(-40.0, spread_db=10.0))
    assert np.all(amp > 0)


# ---------------------------------------------------------------------------
# vibration


def test_zero_spectrum_gives_zero_signal():
    x = S.synthesize_vibration(np.zeros((N_ORDER, 4)), 300.0, _truth(), np.random.default_rng(0))
    assert np.all(x == 0)


def test_single_tone_closed_form():
    spec = np.zeros((N_ORDER, 4))
    spec[4, 1] = 1.0
    phases = np.random.default_rng(3).uniform(0, 2 * np.pi, (N_ORDER, 4))
    x = S.synthesize_vibration(spec, 300.0, _truth(), np.random.default_rng(0), phases=phases)
    h5 = 1.0 / np.sqrt((1 - 0.25) ** 2 + (2 * 0.1 * 0.5) ** 2)
    np.testing.assert_allclose(x[:, 1], h5 * np.cos(5 * THETA + phases[4, 1]), atol=1e-12)
    assert np.all(x[:, [0, 2, 3]] == 0)


@pytest.mark.parametrize("snr", [2.0, -2.0, 10.0])
def test_requested_snr_is_measured(snr):
    rng = np.random.default_rng(4)
    spec = S.sample_roughness_spectrum(rng, _flat_profile(20.0, spread_db=3.0))
    clean = S.synthesize_vibration(spec, 300.0, _truth(), rng, phases=np.zeros((N_ORDER, 4)))
    noisy = S.synthesize_vibration(spec, 300.0, _truth(noise_snr_db=snr), np.random.default_rng(5),
                                   phases=np.zeros((N_ORDER, 4)))
    noise = noisy - clean
    measured = 10 * np.log10(np.mean(clean**2) / np.mean(noise**2))
    assert abs(measured - snr) < 0.1


def test_add_noise_infinite_snr_is_identity():
    x = np.random.default_rng(0).standard_normal((3, 400, 4))
    assert S.add_noise(x, np.inf, np.random.default_rng(1)) is x
    assert S.add_noise(x, None, np.random.default_rng(1)) is x


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_doubling_spectrum_doubles_signal(seed):
    rng = np.random.default_rng(seed)
    spec = S.sample_roughness_spectrum(rng, _flat_profile(10.0, spread_db=5.0))
    phases = rng.uniform(0, 2 * np.pi, (N_ORDER, 4))
    truth = _truth(coupling=S.base_coupling(S.SynthConfig()))
    x1 = S.synthesize_vibration(spec, 300.0, truth, rng, phases=phases)
    x2 = S.synthesize_vibration(2 * spec, 300.0, truth, rng, phases=phases)
    np.testing.assert_array_equal(x2, 2 * x1)


# ---------------------------------------------------------------------------
# truth model


@pytest.mark.parametrize("kw", [dict(centers=[1.0]), dict(centers=[40.0]), dict(dampings=[0.0]),
                                dict(gains=[-1.0]), dict(coupling=np.ones((4, 4)))])
def test_truth_invariants_enforced(kw):
    with pytest.raises(ConfigError):
        _truth(**kw)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 2.0))
@settings(max_examples=50, deadline=None)
def test_jittered_truth_stays_valid(seed, jitter):
    cfg = S.SynthConfig(jitter_center=min(jitter, 0.5), jitter_coupling=jitter, coupling=(0.4, 0.3, 0.2))
    t = S.jitter_truth(S.base_truth(cfg), cfg, np.random.default_rng(seed))
    assert S.is_diagonally_dominant(t.coupling)
    assert np.all((t.centers > 1) & (t.centers < 40))


# ---------------------------------------------------------------------------
# datasets


def test_zero_jitter_shares_one_truth():
    cfg = S.SynthConfig(jitter_center=0, jitter_damping=0, jitter_gain=0, jitter_coupling=0, **SMALL)
    truths = list(S.generate_dataset(cfg).truths.values())
    for t in truths[1:]:
        for f in ("centers", "dampings", "gains", "coupling"):
            np.testing.assert_array_equal(getattr(t, f), getattr(truths[0], f))


def test_bundle_bookkeeping():
    data = S.generate_dataset(S.SynthConfig(n_groups=3, val_groups=("g2",)), n_per_group=100)
    b = data.batch
    assert (b.x.shape, b.v.shape, b.y.shape) == ((300, 400, 4), (300, 4), (300, 40, 4))
    assert len(data.train()) == 200 and len(data.val()) == 100
    assert np.all((b.v >= 295) & (b.v <= 305))


def test_center_jitter_shifts_transfer_curves():
    cfg = S.SynthConfig(jitter_center=0.1, jitter_damping=0, jitter_gain=0, **SMALL)
    truths = S.generate_dataset(cfg).truths
    db = {g: 20 * np.log10(t.order_gain()) for g, t in truths.items()}
    assert np.mean(np.abs(db["g3"] - db["g0"])) > 0


def test_n_per_group_validated():
    with pytest.raises(ConfigError):
        S.generate_dataset(S.SynthConfig(), n_per_group=0)
    with pytest.raises(ConfigError):
        S.generate_dataset(S.SynthConfig(n_groups=1), n_per_group=2)


def test_generation_is_deterministic():
    a = S.generate_dataset(S.SynthConfig(seed=7, **SMALL)).batch
    b = S.generate_dataset(S.SynthConfig(seed=7, **SMALL)).batch
    for f in ("x", "v", "y"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
    c = S.generate_dataset(S.SynthConfig(seed=8, **SMALL)).batch
    assert not np.array_equal(a.x, c.x)


def test_labels_match_implied_profiles():
    rng = np.random.default_rng(9)
    prof = S.group_profile(S.SynthConfig(), rng)
    for _ in range(5):
        spec = S.sample_roughness_spectrum(rng, prof)
        phases = rng.uniform(0, 2 * np.pi, (N_ORDER, 4))
        labels = 20 * np.log10(spec / 1e-3)
        for c in range(4):
            got = profile_to_order_labels(S.implied_profile(spec[:, c], phases[:, c]))
            np.testing.assert_allclose(got, labels[:, c], atol=1e-9)


def test_speed_exponent_scales_amplitude():
    truth = _truth(speed_exponent=2.0)
    spec = np.ones((N_ORDER, 4))
    ratio = S.tone_amplitudes(spec, 330.0, truth) / S.tone_amplitudes(spec, 300.0, truth)
    np.testing.assert_allclose(ratio, 1.21)


def test_raw_mode_round_trips_through_preprocess():
    cfg = S.SynthConfig(n_groups=2, val_groups=("g1",), noise_snr_db=None, coupling=(0.0, 0.0, 0.0))
    raw = S.generate_raw(cfg, seconds=1)
    train, val = build_dataset(raw["records"], raw["profiles"], raw["split"])
    assert len(train) > 0 and len(val) > 0
    assert train.groups == {"g0"} and val.groups == {"g1"}
    np.testing.assert_allclose(train.y[0], raw["labels"]["g0"], atol=1e-6)
    # a clean revolution carries the truth tone amplitudes at every order
    amp = 2 * np.abs(np.fft.rfft(train.x[0], axis=0))[1:41] / 400
    truth = raw["truths"]["g0"]
    spec = 1e-3 * 10 ** (raw["labels"]["g0"] / 20)
    want = spec * truth.order_gain()[:, None]
    assert np.median(np.abs(20 * np.log10(amp / want))) < 0.5


def test_in_class_oracle_is_representable():
    cfg = S.in_class_config(seed=3)
    assert cfg.seed == 3 and cfg.noise_snr_db is None
    truth = S.base_truth(cfg)
    assert len(truth.centers) == PhysConfig().n_modes
    np.testing.assert_array_equal(truth.coupling, np.eye(4))
    data = S.generate_dataset(S.in_class_config(n_per_group=2))
    assert len({id(t) for t in data.truths.values()}) == 4
    for t in data.truths.values():
        np.testing.assert_array_equal(t.centers, truth.centers)
