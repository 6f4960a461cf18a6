"""Raw operational records -> fixed-shape supervised pairs.

Pipeline per bogie record: speed-window filter -> per-channel revolution
segmentation by travelled distance -> angle-domain resampling to 400 points.
Labels come from the lathe profile of each wheel: resample to 400 angles,
DFT, single-sided amplitudes of orders 1..40 in dB.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError

FS_VIB = 10_000  # Hz
FS_SPEED = 1  # Hz
N_ANGLE = 400
N_ORDER = 40
N_CHANNEL = 4
V_MIN, V_MAX = 295.0, 305.0  # km/h
LABEL_REF_MM = 1e-3
EPS_DB = 1e-6


@dataclass
class RawRecord:
    vibration: np.ndarray  # (T, 4) m/s^2 at 10 kHz
    speed: np.ndarray  # (S,) km/h at 1 Hz
    wheel_circumference: np.ndarray  # (4,) m
    wheel_group_id: str

    def __post_init__(self):
        self.vibration = np.asarray(self.vibration, dtype=np.float64)
        self.speed = np.asarray(self.speed, dtype=np.float64).reshape(-1)
        self.wheel_circumference = np.broadcast_to(
            np.asarray(self.wheel_circumference, dtype=np.float64), (self.n_channels,)).copy()
        if np.any(self.wheel_circumference <= 0):
            raise DataError("wheel_circumference must be > 0")

    @property
    def n_channels(self) -> int:
        return 1 if self.vibration.ndim == 1 else self.vibration.shape[1]


@dataclass
class WheelProfile:
    """Radial deviation (mm) over one revolution, angle 0 inclusive, 2*pi exclusive."""

    deviation: np.ndarray
    wheel_group_id: str
    channel: int


@dataclass
class SampleBatch:
    x: np.ndarray  # (N, 400, 4)
    v: np.ndarray  # (N, 4) km/h
    y: np.ndarray  # (N, 40, 4) dB
    group_ids: np.ndarray = field(default_factory=lambda: np.array([], dtype=str))

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1, N_ANGLE, N_CHANNEL)
        self.v = np.asarray(self.v, dtype=np.float64).reshape(-1, N_CHANNEL)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1, N_ORDER, N_CHANNEL)
        self.group_ids = np.asarray(self.group_ids, dtype=str).reshape(-1)
        n = len(self.x)
        if not (len(self.v) == len(self.y) == len(self.group_ids) == n):
            raise DataError(f"inconsistent batch lengths x={n} v={len(self.v)} "
                            f"y={len(self.y)} groups={len(self.group_ids)}")

    def __len__(self) -> int:
        return len(self.x)

    def subset(self, idx) -> "SampleBatch":
        return SampleBatch(self.x[idx], self.v[idx], self.y[idx], self.group_ids[idx])

    @property
    def groups(self) -> set[str]:
        return set(self.group_ids.tolist())

    @staticmethod
    def empty() -> "SampleBatch":
        return SampleBatch(np.zeros((0, N_ANGLE, N_CHANNEL)), np.zeros((0, N_CHANNEL)),
                           np.zeros((0, N_ORDER, N_CHANNEL)), np.array([], dtype=str))

    @staticmethod
    def concat(batches: Sequence["SampleBatch"]) -> "SampleBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            return SampleBatch.empty()
        return SampleBatch(np.concatenate([b.x for b in batches]), np.concatenate([b.v for b in batches]),
                           np.concatenate([b.y for b in batches]),
                           np.concatenate([b.group_ids for b in batches]))


def filter_speed(record: RawRecord | np.ndarray, v_min: float = V_MIN,
                 v_max: float = V_MAX) -> list[tuple[float, float]]:
    """Maximal time intervals (seconds, half-open) with speed inside [v_min, v_max].

    Speed is held constant over each 1 s tick.
    """
    if v_min >= v_max:
        raise ConfigError(f"v_min ({v_min}) must be < v_max ({v_max})")
    speed = record.speed if isinstance(record, RawRecord) else np.asarray(record, dtype=np.float64)
    ok = (speed >= v_min) & (speed <= v_max)
    segments = []
    start = None
    for i, flag in enumerate(ok):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            segments.append((float(start), float(i)))
            start = None
    if start is not None:
        segments.append((float(start), float(len(ok))))
    return segments


def _sample_speed(speed, n: int, fs: int = FS_VIB) -> np.ndarray:
    """Per-sample speed in m/s by zero-order hold of a 1 Hz km/h series (or a scalar)."""
    speed = np.asarray(speed, dtype=np.float64)
    if speed.ndim == 0:
        return np.full(n, float(speed) / 3.6)
    tick = np.minimum(np.arange(n) // fs, len(speed) - 1)
    return speed[tick] / 3.6


def cumulative_distance(speed_ms: np.ndarray, fs: int = FS_VIB) -> np.ndarray:
    """Distance (m) at each sample boundary: d[0] = 0, d[i] = sum_{j<i} v_j / fs."""
    d = np.empty(len(speed_ms) + 1)
    d[0] = 0.0
    np.cumsum(speed_ms / fs, out=d[1:])
    return d


def segment_revolutions(segment: np.ndarray, speed, circumference: float,
                        fs: int = FS_VIB) -> list[np.ndarray]:
    """Cut a vibration slice into whole revolutions by travelled distance.

    ``speed`` is a scalar (km/h) or the 1 Hz km/h series aligned with the
    segment start.  Cuts fall at the sample nearest to each multiple of the
    circumference; the trailing partial revolution is dropped.
    """
    segment = np.asarray(segment, dtype=np.float64)
    n = len(segment)
    if n == 0:
        return []
    if circumference <= 0:
        raise DataError("circumference must be > 0")
    v = _sample_speed(speed, n, fs)
    if np.any(v <= 0):
        raise DataError("speed must be positive inside a segment")
    d = cumulative_distance(v, fs)
    n_rev = int(np.floor(d[-1] / circumference + 1e-9))
    if n_rev < 1:
        return []
    targets = circumference * np.arange(n_rev + 1)
    # fractional sample position of each target distance, then nearest sample
    pos = np.interp(targets, d, np.arange(n + 1))
    cuts = np.rint(pos).astype(int)
    cuts[0] = 0
    cuts = np.minimum(cuts, n)
    return [segment[cuts[k]:cuts[k + 1]] for k in range(n_rev) if cuts[k + 1] > cuts[k]]


def resample_angle(rev_slice: np.ndarray, speed=None, n_points: int = N_ANGLE,
                   fs: int = FS_VIB) -> np.ndarray:
    """Resample one revolution onto ``n_points`` uniform angles in [0, 2*pi).

    Each raw sample gets the angle 2*pi*d_i/d_total from cumulative distance;
    ``speed`` is None (constant), a scalar, a per-sample km/h array, or a 1 Hz
    series.  The signal is treated as periodic for the last interval.
    """
    x = np.asarray(rev_slice, dtype=np.float64)
    n = len(x)
    if n == 0:
        raise DataError("empty revolution slice")
    if speed is None:
        v = np.ones(n)
    else:
        sp = np.asarray(speed, dtype=np.float64)
        v = sp / 3.6 if sp.shape == (n,) else _sample_speed(sp, n, fs)
    if np.all(v == v[0]):
        v = np.ones(n)  # integer cumulative sums keep the uniform case exact
    d = cumulative_distance(v, 1)
    if np.any(np.diff(d) <= 0):
        raise DataError("cumulative distance is not strictly increasing")
    # interpolate in fractions of a revolution; the 2*pi factor cancels
    theta = d / d[-1]
    grid = np.arange(n_points) / n_points
    xp = np.concatenate([x, x[:1]], axis=0)
    if xp.ndim == 1:
        return np.interp(grid, theta, xp)
    return np.stack([np.interp(grid, theta, xp[:, c]) for c in range(xp.shape[1])], axis=1)


def order_amplitudes(x_angle: np.ndarray, n_orders: int = N_ORDER) -> np.ndarray:
    """Single-sided DFT amplitude at orders 1..n_orders along axis -2 (or axis 0 for 1-D)."""
    axis = 0 if np.ndim(x_angle) == 1 else -2
    n = np.shape(x_angle)[axis]
    spec = np.fft.rfft(x_angle, axis=axis)
    amp = 2.0 * np.abs(spec) / n
    return np.take(amp, np.arange(1, n_orders + 1), axis=axis)


def amplitude_to_db(amp, ref: float = LABEL_REF_MM, eps_db: float = EPS_DB) -> np.ndarray:
    """Label convention: 20*log10(amp/ref), clamped at the eps_db relative floor."""
    return 20.0 * np.log10(np.maximum(np.asarray(amp, dtype=np.float64) / ref, eps_db))


def profile_to_order_labels(profile: WheelProfile | np.ndarray, ref: float = LABEL_REF_MM,
                            eps_db: float = EPS_DB) -> np.ndarray:
    """Order 1..40 roughness labels in dB re ``ref`` (mm)."""
    dev = profile.deviation if isinstance(profile, WheelProfile) else profile
    dev = np.asarray(dev, dtype=np.float64).reshape(-1)
    if len(dev) < 2 * N_ORDER + 1:
        raise DataError(f"profile needs >= {2 * N_ORDER + 1} points, got {len(dev)}")
    uniform = resample_angle(dev, None, N_ANGLE) if len(dev) != N_ANGLE else dev
    return amplitude_to_db(order_amplitudes(uniform), ref, eps_db)


def normalize_split(split_map: Mapping) -> dict[str, str]:
    """Accept ``{group: split}`` or ``{"train": [...], "val": [...]}``; return ``{group: split}``.

    A group listed under both splits is a configuration error.
    """
    if set(split_map) <= {"train", "val"} and all(
            isinstance(v, (list, tuple, set, np.ndarray)) for v in split_map.values()):
        out: dict[str, str] = {}
        for split, groups in split_map.items():
            for g in groups:
                g = str(g)
                if g in out and out[g] != split:
                    raise ConfigError(f"split hygiene violated: group {g!r} assigned to both train and val")
                out[g] = split
        return out
    out = {str(g): str(s) for g, s in split_map.items()}
    bad = {g: s for g, s in out.items() if s not in ("train", "val")}
    if bad:
        raise ConfigError(f"split assignment must be 'train' or 'val': {bad}")
    return out


def build_dataset(records: Sequence[RawRecord], profiles: Sequence[WheelProfile] | Mapping,
                  split_assignment: Mapping, v_min: float = V_MIN, v_max: float = V_MAX,
                  ref: float = LABEL_REF_MM) -> tuple[SampleBatch, SampleBatch]:
    """Raw records + profiles -> group-disjoint (train, val) batches."""
    split_assignment = normalize_split(split_assignment)
    if isinstance(profiles, Mapping):
        prof_list = list(profiles.values())
    else:
        prof_list = list(profiles)
    by_group: dict[str, dict[int, WheelProfile]] = {}
    for p in prof_list:
        by_group.setdefault(str(p.wheel_group_id), {})[int(p.channel)] = p

    out = {"train": [], "val": []}
    for rec in records:
        gid = str(rec.wheel_group_id)
        if gid not in split_assignment:
            raise ConfigError(f"group {gid!r} has no split assignment")
        if rec.n_channels != N_CHANNEL:
            raise DataError(f"record {gid!r} has {rec.n_channels} channels, expected {N_CHANNEL}")
        chans = by_group.get(gid, {})
        if sorted(chans) != list(range(N_CHANNEL)):
            raise DataError(f"group {gid!r} needs profiles for channels 0..3, has {sorted(chans)}")
        labels = np.stack([profile_to_order_labels(chans[c], ref) for c in range(N_CHANNEL)], axis=1)

        xs, vs = [], []
        for t0, t1 in filter_speed(rec, v_min, v_max):
            i0, i1 = int(round(t0 * FS_VIB)), int(round(t1 * FS_VIB))
            seg_speed = rec.speed[int(t0):int(t1)]
            per_channel = []
            for c in range(N_CHANNEL):
                seg = rec.vibration[i0:i1, c]
                revs = segment_revolutions(seg, seg_speed, rec.wheel_circumference[c])
                starts = np.concatenate([[0], np.cumsum([len(r) for r in revs])])
                v_samples = _sample_speed(seg_speed, len(seg)) * 3.6
                per_channel.append([(r, v_samples[starts[k]:starts[k + 1]]) for k, r in enumerate(revs)])
            n_rev = min(len(p) for p in per_channel)
            for k in range(n_rev):
                xs.append(np.stack([resample_angle(per_channel[c][k][0], per_channel[c][k][1])
                                    for c in range(N_CHANNEL)], axis=1))
                vs.append(np.full(N_CHANNEL, np.mean(np.concatenate(
                    [per_channel[c][k][1] for c in range(N_CHANNEL)]))))
        if xs:
            n = len(xs)
            out[split_assignment[gid]].append(SampleBatch(np.stack(xs), np.stack(vs),
                                                          np.broadcast_to(labels, (n,) + labels.shape),
                                                          np.full(n, gid)))
    return SampleBatch.concat(out["train"]), SampleBatch.concat(out["val"])
