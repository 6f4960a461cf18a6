"""Synthetic physics oracle: roughness spectra -> axle-box vibration.

Each wheel group owns a ground-truth second-order modal system (a few
modes of center/damping/gain) and a diagonally dominant 4x4 channel
coupling.  A sample is generated by drawing a 40x4 roughness spectrum,
shaping every order by the summed modal response magnitude, placing the
tones at random phases on 400 angles, mixing channels and adding noise.
Groups differ by jittered truth parameters, so a held-out group is a
distribution shift in the same sense as an unseen wheel.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .preprocess import (FS_VIB, LABEL_REF_MM, N_ANGLE, N_CHANNEL, N_ORDER, EPS_DB, RawRecord,
                         SampleBatch, WheelProfile, amplitude_to_db, cumulative_distance)

ORDERS = np.arange(1, N_ORDER + 1, dtype=np.float64)
V_REF = 300.0  # km/h, speed at which the response is unscaled


def transfer_magnitude(orders, centers, dampings, gains) -> np.ndarray:
    """|H_m| of each mode on the order axis, shape (M, len(orders))."""
    r = np.asarray(orders, dtype=np.float64)[None, :] / np.asarray(centers, dtype=np.float64)[:, None]
    z = np.asarray(dampings, dtype=np.float64)[:, None]
    return np.asarray(gains, dtype=np.float64)[:, None] / np.sqrt((1 - r**2) ** 2 + (2 * z * r) ** 2)


@dataclass
class GroupProfile:
    """Roughness distribution of one wheel group, in label dB."""

    mean_db: np.ndarray  # (40, 4) band centre
    spread_db: float = 4.0  # half-width of the log-uniform band
    emphasized: tuple[int, ...] = ()  # 1-based polygon orders
    boost: tuple[float, float] = (3.0, 10.0)  # amplitude factor range for emphasized orders


@dataclass
class TruthModel:
    centers: np.ndarray
    dampings: np.ndarray
    gains: np.ndarray
    coupling: np.ndarray  # (4, 4)
    noise_snr_db: float | None = None
    speed_range: tuple[float, float] = (295.0, 305.0)
    speed_exponent: float = 0.0  # response scales as (v / V_REF) ** speed_exponent

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        self.dampings = np.asarray(self.dampings, dtype=np.float64)
        self.gains = np.asarray(self.gains, dtype=np.float64)
        self.coupling = np.asarray(self.coupling, dtype=np.float64)
        if np.any(self.centers <= 1) or np.any(self.centers >= 40):
            raise ConfigError("truth centers must lie in (1, 40)")
        if np.any(self.dampings <= 0) or np.any(self.gains <= 0):
            raise ConfigError("truth dampings and gains must be > 0")
        if not is_diagonally_dominant(self.coupling):
            raise ConfigError("truth coupling must be diagonally dominant")

    def order_gain(self) -> np.ndarray:
        """Summed modal magnitude at orders 1..40."""
        return transfer_magnitude(ORDERS, self.centers, self.dampings, self.gains).sum(axis=0)


def is_diagonally_dominant(c: np.ndarray) -> bool:
    c = np.asarray(c)
    off = np.abs(c).sum(axis=1) - np.abs(np.diag(c))
    return bool(np.all(np.abs(np.diag(c)) > off))


@dataclass
class SynthConfig:
    n_groups: int = 4
    n_per_group: int = 64
    val_groups: tuple[str, ...] = ("g3",)
    seed: int = 0
    m_true: int = 6
    center_range: tuple[float, float] = (4.0, 34.0)
    damping: float = 0.15
    gain: float = 300.0
    # same-axle, same-side, diagonal neighbour couplings (channels FL, FR, RL, RR)
    coupling: tuple[float, float, float] = (0.04, 0.02, 0.01)
    jitter_center: float = 0.05
    jitter_damping: float = 0.10
    jitter_gain: float = 0.10
    jitter_coupling: float = 0.30
    base_db: float = 30.0  # label level at order 1
    slope_db_per_decade: float = -10.0
    group_offset_db: float = 3.0  # per-(group, order, channel) spread of band centres
    spread_db: float = 4.0
    n_emphasized: int = 1
    boost: tuple[float, float] = (3.0, 10.0)
    noise_snr_db: float | None = 30.0
    speed_exponent: float = 0.0
    label_ref_mm: float = LABEL_REF_MM

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for k in ("val_groups", "center_range", "coupling", "boost"):
            if k in known and known[k] is not None:
                known[k] = tuple(known[k])
        return cls(**known)


def in_class_config(n_modes: int = 12, **overrides) -> SynthConfig:
    """Noiseless oracle whose truth the model can represent exactly.

    ``n_modes`` truth modes spread over the order grid, identity coupling and
    no per-group jitter.
    """
    values = dict(m_true=n_modes, center_range=(2.5, 38.5), coupling=(0.0, 0.0, 0.0), noise_snr_db=None,
                  jitter_center=0.0, jitter_damping=0.0, jitter_gain=0.0, jitter_coupling=0.0)
    return SynthConfig(**{**values, **overrides})


def base_coupling(cfg: SynthConfig) -> np.ndarray:
    axle, side, diag = cfg.coupling
    # channel order FL, FR, RL, RR
    c = np.array([[1.0, axle, side, diag],
                  [axle, 1.0, diag, side],
                  [side, diag, 1.0, axle],
                  [diag, side, axle, 1.0]])
    return c


def base_truth(cfg: SynthConfig) -> TruthModel:
    m = cfg.m_true
    centers = np.linspace(*cfg.center_range, m)
    return TruthModel(centers, np.full(m, cfg.damping), np.full(m, cfg.gain),
                      base_coupling(cfg), cfg.noise_snr_db, speed_exponent=cfg.speed_exponent)


def jitter_truth(base: TruthModel, cfg: SynthConfig, rng: np.random.Generator) -> TruthModel:
    """Per-group perturbation of the truth parameters (relative jitter)."""
    m = len(base.centers)

    def jit(values, pct):
        return values * (1.0 + pct * rng.uniform(-1.0, 1.0, size=np.shape(values)))

    centers = np.clip(jit(base.centers, cfg.jitter_center), 1.5, 39.5)
    dampings = jit(base.dampings, cfg.jitter_damping)
    gains = jit(base.gains, cfg.jitter_gain)
    coupling = base.coupling.copy()
    off = ~np.eye(N_CHANNEL, dtype=bool)
    coupling[off] = jit(coupling[off], cfg.jitter_coupling)
    if not is_diagonally_dominant(coupling):
        coupling[off] *= 0.9 / (np.abs(coupling[off]).reshape(4, 3).sum(axis=1).max())
    assert len(centers) == m
    return TruthModel(centers, dampings, gains, coupling, base.noise_snr_db, base.speed_range,
                      base.speed_exponent)


def group_profile(cfg: SynthConfig, rng: np.random.Generator) -> GroupProfile:
    trend = cfg.base_db + cfg.slope_db_per_decade * np.log10(ORDERS)
    mean_db = trend[:, None] + cfg.group_offset_db * rng.uniform(-1, 1, size=(N_ORDER, N_CHANNEL))
    emph = tuple(int(k) for k in rng.choice(np.arange(10, 31), size=cfg.n_emphasized, replace=False))
    return GroupProfile(mean_db, cfg.spread_db, emph, cfg.boost)


def sample_roughness_spectrum(rng: np.random.Generator, profile: GroupProfile,
                              ref: float = LABEL_REF_MM) -> np.ndarray:
    """Draw a (40, 4) linear roughness spectrum (mm), log-uniform within the band."""
    u = rng.uniform(-1.0, 1.0, size=(N_ORDER, N_CHANNEL)) if profile.spread_db > 0 else np.zeros((N_ORDER, N_CHANNEL))
    amp = ref * 10.0 ** ((profile.mean_db + profile.spread_db * u) / 20.0)
    for k in profile.emphasized:
        lo, hi = profile.boost
        factor = rng.uniform(lo, hi, size=N_CHANNEL) if hi > lo else np.full(N_CHANNEL, lo)
        amp[k - 1] *= factor
    return amp


def add_noise(x: np.ndarray, snr_db: float | None, rng: np.random.Generator) -> np.ndarray:
    """White Gaussian noise at an exact per-(sample, channel) SNR over the angle axis.

    ``x`` is (..., T, C).  The noise draw is rescaled so that
    10*log10(P_signal / P_noise) equals ``snr_db`` for every channel of every
    sample.  ``None`` or +inf returns ``x`` unchanged.
    """
    if snr_db is None or np.isinf(snr_db):
        return x
    noise = rng.standard_normal(x.shape)
    p_sig = np.mean(x**2, axis=-2, keepdims=True)
    p_raw = np.mean(noise**2, axis=-2, keepdims=True)
    target = p_sig * 10.0 ** (-snr_db / 10.0)
    return x + noise * np.sqrt(target / p_raw)


def tone_amplitudes(spectrum: np.ndarray, speed: float, truth: TruthModel) -> np.ndarray:
    """Per-(order, channel) vibration tone amplitude before channel mixing."""
    return spectrum * truth.order_gain()[:, None] * (float(speed) / V_REF) ** truth.speed_exponent


def synthesize_vibration(spectrum: np.ndarray, speed: float, truth: TruthModel,
                         rng: np.random.Generator, phases: np.ndarray | None = None) -> np.ndarray:
    """Angle-domain (400, 4) vibration for one revolution."""
    amp = tone_amplitudes(np.asarray(spectrum, dtype=np.float64), speed, truth)
    if phases is None:
        phases = rng.uniform(0.0, 2 * np.pi, size=(N_ORDER, N_CHANNEL))
    theta = 2 * np.pi * np.arange(N_ANGLE) / N_ANGLE
    # (400, 40, 4): order k tone of every channel
    tones = np.cos(theta[:, None, None] * ORDERS[None, :, None] + phases[None])
    s = np.einsum("nkc,kc->nc", tones, amp)
    x = s @ truth.coupling.T
    return add_noise(x, truth.noise_snr_db, rng)


def implied_profile(spectrum_col: np.ndarray, phases: np.ndarray, n_points: int = N_ANGLE) -> np.ndarray:
    """Radial deviation (mm) realising a one-wheel roughness spectrum."""
    theta = 2 * np.pi * np.arange(n_points) / n_points
    return np.cos(theta[:, None] * ORDERS[None, :] + phases[None, :]) @ spectrum_col


@dataclass
class SynthData:
    """In-memory product of :func:`generate_dataset` (written to disk by ``bundle``)."""

    batch: SampleBatch
    split: dict[str, str]
    truths: dict[str, TruthModel]
    profiles: dict[str, GroupProfile]
    config: SynthConfig
    raw: dict | None = field(default=None)

    def train(self) -> SampleBatch:
        return self.batch.subset(np.array([self.split[g] == "train" for g in self.batch.group_ids], dtype=bool))

    def val(self) -> SampleBatch:
        return self.batch.subset(np.array([self.split[g] == "val" for g in self.batch.group_ids], dtype=bool))


def group_ids(n_groups: int) -> list[str]:
    return [f"g{i}" for i in range(n_groups)]


def generate_dataset(cfg: SynthConfig, n_per_group: int | None = None,
                     groups: list[str] | None = None) -> SynthData:
    """Generate a group-structured synthetic bundle.

    Streams are derived from (seed, group index, sample index), so the result
    is bit-reproducible and independent of generation order.
    """
    n_per_group = cfg.n_per_group if n_per_group is None else n_per_group
    groups = groups or group_ids(cfg.n_groups)
    if n_per_group < 1:
        raise ConfigError("n_per_group must be >= 1")
    if len(groups) < 2:
        raise ConfigError("need at least 2 groups for a held-out split")
    val = set(cfg.val_groups) & set(groups) or {groups[-1]}
    split = {g: ("val" if g in val else "train") for g in groups}
    if all(s == "val" for s in split.values()):
        raise ConfigError("no training group left")

    root = np.random.SeedSequence(cfg.seed)
    group_seqs = root.spawn(len(groups))
    base = base_truth(cfg)
    xs, vs, ys, gids = [], [], [], []
    truths, profiles = {}, {}
    for gi, (g, gseq) in enumerate(zip(groups, group_seqs)):
        meta_seq, samples_seq = gseq.spawn(2)
        grng = np.random.default_rng(meta_seq)
        truth = jitter_truth(base, cfg, grng)
        prof = group_profile(cfg, grng)
        truths[g], profiles[g] = truth, prof
        for sseq in samples_seq.spawn(n_per_group):
            rng = np.random.default_rng(sseq)
            spec = sample_roughness_spectrum(rng, prof, cfg.label_ref_mm)
            speed = rng.uniform(*truth.speed_range)
            xs.append(synthesize_vibration(spec, speed, truth, rng))
            vs.append(np.full(N_CHANNEL, speed))
            ys.append(amplitude_to_db(spec, cfg.label_ref_mm, EPS_DB))
            gids.append(g)
    batch = SampleBatch(np.stack(xs), np.stack(vs), np.stack(ys), np.array(gids))
    return SynthData(batch, split, truths, profiles, cfg)


# ---------------------------------------------------------------------------
# raw mode: 10 kHz time series + 1 Hz speed + lathe profiles


def synthesize_raw_record(group: str, truth: TruthModel, profile: GroupProfile, speed_series,
                          circumference, rng: np.random.Generator,
                          ref: float = LABEL_REF_MM, profile_points: int = 1200
                          ) -> tuple[RawRecord, list[WheelProfile], np.ndarray]:
    """One bogie record in the time domain for a fixed wheel state.

    Channel c sees wheel c' at that wheel's own rotation angle
    2*pi*distance/circumference[c'], mixed by the truth coupling.  Returns the
    record, the four lathe profiles and the exact (40, 4) labels.
    """
    speed_series = np.asarray(speed_series, dtype=np.float64)
    circ = np.broadcast_to(np.asarray(circumference, dtype=np.float64), (N_CHANNEL,))
    spec = sample_roughness_spectrum(rng, profile, ref)
    phases = rng.uniform(0, 2 * np.pi, size=(N_ORDER, N_CHANNEL))
    n = len(speed_series) * FS_VIB
    v_ms = np.repeat(speed_series, FS_VIB) / 3.6
    dist = cumulative_distance(v_ms)[:-1]
    scale = (np.repeat(speed_series, FS_VIB) / V_REF) ** truth.speed_exponent
    gain = truth.order_gain()
    s = np.zeros((n, N_CHANNEL))
    for c in range(N_CHANNEL):
        theta = 2 * np.pi * dist / circ[c]
        for k in range(N_ORDER):
            s[:, c] += spec[k, c] * gain[k] * np.cos((k + 1) * theta + phases[k, c])
    s *= scale[:, None]
    x = s @ truth.coupling.T
    if truth.noise_snr_db is not None:
        x = add_noise(x, truth.noise_snr_db, rng)
    record = RawRecord(x, speed_series, circ.copy(), group)
    profiles = [WheelProfile(implied_profile(spec[:, c], phases[:, c], profile_points), group, c)
                for c in range(N_CHANNEL)]
    return record, profiles, amplitude_to_db(spec, ref, EPS_DB)


def generate_raw(cfg: SynthConfig, groups: list[str] | None = None, seconds: int = 4,
                 circumference: float = 2.9) -> dict:
    """Raw-mode bundle content: records, profiles, labels, split and truths."""
    groups = groups or group_ids(cfg.n_groups)
    root = np.random.SeedSequence([cfg.seed, 1])
    base = base_truth(cfg)
    val = set(cfg.val_groups) & set(groups) or {groups[-1]}
    out = {"records": [], "profiles": [], "labels": {}, "split": {}, "truths": {}}
    for g, gseq in zip(groups, root.spawn(len(groups))):
        rng = np.random.default_rng(gseq)
        truth = jitter_truth(base, cfg, rng)
        prof = group_profile(cfg, rng)
        # one out-of-window tick either side of an in-window run
        speeds = np.concatenate([[285.0], rng.uniform(296.0, 304.0, size=seconds), [312.0]])
        circ = circumference * (1.0 + 0.002 * rng.uniform(-1, 1, size=N_CHANNEL))
        rec, profs, labels = synthesize_raw_record(g, truth, prof, speeds, circ, rng, cfg.label_ref_mm)
        out["records"].append(rec)
        out["profiles"].extend(profs)
        out["labels"][g] = labels
        out["split"][g] = "val" if g in val else "train"
        out["truths"][g] = truth
    return out
