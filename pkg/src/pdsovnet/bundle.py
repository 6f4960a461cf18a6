"""On-disk dataset bundle: ``manifest.json`` plus little-endian float64 blobs.

Layout of a bundle directory::

    manifest.json   shapes, counts, group ids, split map, generator config, seed, dB reference
    X.bin           (N, 400, 4) angle-domain vibration
    V.bin           (N, 4) speed, km/h
    Y.bin           (N, 40, 4) roughness labels, dB
    raw/            optional raw-mode blobs listed under manifest["raw"]

All blobs are row-major ``<f8``.  Serialisation returns a ``{relative path:
bytes}`` map; only the CLI touches the filesystem for writing.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .preprocess import LABEL_REF_MM, RawRecord, SampleBatch, WheelProfile, normalize_split

FORMAT = "pdsovnet-bundle/1"
BLOBS = ("X", "V", "Y")


@dataclass
class DatasetBundle:
    batch: SampleBatch
    split: dict[str, str]
    generator: dict | None = None  # generator config (includes its seed) or None for preprocessed data
    label_ref_mm: float = LABEL_REF_MM
    raw_records: list[RawRecord] = field(default_factory=list)
    raw_profiles: list[WheelProfile] = field(default_factory=list)

    def __post_init__(self):
        self.split = normalize_split(self.split)
        missing = self.batch.groups - set(self.split)
        if missing:
            raise DataError(f"split map does not cover groups {sorted(missing)}")

    def part(self, name: str) -> SampleBatch:
        mask = np.array([self.split[g] == name for g in self.batch.group_ids], dtype=bool)
        return self.batch.subset(mask)

    def train(self) -> SampleBatch:
        return self.part("train")

    def val(self) -> SampleBatch:
        return self.part("val")

    def with_split(self, split) -> "DatasetBundle":
        return DatasetBundle(self.batch, split, self.generator, self.label_ref_mm,
                             self.raw_records, self.raw_profiles)


def _blob(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _unblob(raw: bytes, shape, name: str) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    expected = 8 * int(np.prod(shape, dtype=np.int64))
    if len(raw) != expected:
        raise DataError(f"blob {name}: {len(raw)} bytes, expected {expected} for shape {shape}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def _get(files, path: str) -> bytes:
    try:
        return files[path]
    except KeyError:
        raise DataError(f"bundle is missing {path}") from None


def to_files(bundle: DatasetBundle) -> dict[str, bytes]:
    """Serialise to ``{relative path: bytes}`` (manifest last, with blob digests)."""
    b = bundle.batch
    files = {"X.bin": _blob(b.x), "V.bin": _blob(b.v), "Y.bin": _blob(b.y)}
    raw_meta = None
    if bundle.raw_records:
        raw_meta = {"records": [], "profiles": []}
        for i, rec in enumerate(bundle.raw_records):
            entry = {"group": rec.wheel_group_id}
            for key, arr in (("vibration", rec.vibration), ("speed", rec.speed),
                             ("circumference", rec.wheel_circumference)):
                path = f"raw/rec{i}_{key}.bin"
                files[path] = _blob(arr)
                entry[key] = {"path": path, "shape": list(arr.shape)}
            raw_meta["records"].append(entry)
        for i, prof in enumerate(bundle.raw_profiles):
            path = f"raw/profile{i}.bin"
            files[path] = _blob(prof.deviation)
            raw_meta["profiles"].append({"group": prof.wheel_group_id, "channel": prof.channel,
                                         "path": path, "shape": list(np.shape(prof.deviation))})
    groups = sorted(b.groups | set(bundle.split))
    manifest = {
        "format": FORMAT,
        "count": len(b),
        "shapes": {"X": list(b.x.shape), "V": list(b.v.shape), "Y": list(b.y.shape)},
        "group_ids": b.group_ids.tolist(),
        "groups": groups,
        "split": {g: bundle.split[g] for g in groups},
        "generator": bundle.generator,
        "seed": (bundle.generator or {}).get("seed"),
        "label_ref_mm": bundle.label_ref_mm,
        "db": {"label": "20*log10(max(amp/ref, 1e-6))", "ref_mm": bundle.label_ref_mm},
        "raw": raw_meta,
        "sha256": {k: hashlib.sha256(v).hexdigest() for k, v in sorted(files.items())},
    }
    files["manifest.json"] = json.dumps(manifest, indent=1, sort_keys=True).encode("utf-8")
    return files


def from_files(files) -> DatasetBundle:
    """Inverse of :func:`to_files`; ``files`` maps relative path -> bytes (or is a directory)."""
    if isinstance(files, (str, Path)):
        return read_dir(files)
    try:
        manifest = json.loads(files["manifest.json"].decode("utf-8"))
    except KeyError:
        raise DataError("bundle has no manifest.json") from None
    if manifest.get("format") != FORMAT:
        raise DataError(f"unsupported bundle format {manifest.get('format')!r}")
    arrays = {}
    for name in BLOBS:
        key = f"{name}.bin"
        arrays[name] = _unblob(_get(files, key), manifest["shapes"][name], key)
    batch = SampleBatch(arrays["X"], arrays["V"], arrays["Y"], np.array(manifest["group_ids"]))
    records, profiles = [], []
    raw = manifest.get("raw")
    if raw:
        for entry in raw["records"]:
            parts = {k: _unblob(_get(files, entry[k]["path"]), entry[k]["shape"], entry[k]["path"])
                     for k in ("vibration", "speed", "circumference")}
            records.append(RawRecord(parts["vibration"], parts["speed"], parts["circumference"], entry["group"]))
        for entry in raw["profiles"]:
            profiles.append(WheelProfile(_unblob(_get(files, entry["path"]), entry["shape"], entry["path"]),
                                         entry["group"], int(entry["channel"])))
    return DatasetBundle(batch, manifest["split"], manifest.get("generator"),
                         float(manifest.get("label_ref_mm", LABEL_REF_MM)), records, profiles)


def read_dir(path) -> DatasetBundle:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DataError(f"{root} is not a dataset bundle (no manifest.json)")
    manifest = json.loads(manifest_path.read_text())
    names = ["manifest.json", *(f"{n}.bin" for n in BLOBS)]
    raw = manifest.get("raw") or {}
    for entry in raw.get("records", []):
        names += [entry[k]["path"] for k in ("vibration", "speed", "circumference")]
    names += [e["path"] for e in raw.get("profiles", [])]
    files = {}
    for n in names:
        p = root / n
        if not p.is_file():
            raise DataError(f"bundle is missing {n}")
        files[n] = p.read_bytes()
    return from_files(files)


def bundle_hash(bundle_or_files) -> str:
    """Content hash over all blobs and the manifest."""
    files = to_files(bundle_or_files) if isinstance(bundle_or_files, DatasetBundle) else bundle_or_files
    h = hashlib.sha256()
    for k in sorted(files):
        h.update(k.encode())
        h.update(files[k])
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]
