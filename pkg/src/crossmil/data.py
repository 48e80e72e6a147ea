"""Dataset representation, synthetic generator, and on-disk formats.

A dataset is a set of patients, each carrying one weak binary label and
a list of multi-scale instances: embeddings at S magnification scales
that share one spatial location. The synthetic generator plants class
signal at exactly one scale, which gives ground truth both for
classification and for attention localization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, FormatError, IntegrityError

DEFAULT_SCALE_LABELS = ("20x", "10x", "5x")
GRID_CELL = 256.0  # synthetic patch pitch, level-0 pixel units


@dataclass(frozen=True)
class ScaleId:
    index: int
    label: str


@dataclass(frozen=True)
class PatchEmbedding:
    """One patch's embedding row, as stored on disk."""

    patient_id: str
    location_id: int
    scale: ScaleId
    xy: tuple[float, float]
    vector: np.ndarray


@dataclass(frozen=True)
class MultiScaleInstance:
    """Embeddings at all S scales for one spatial location."""

    location_id: int
    xy: tuple[float, float]
    vectors: tuple[np.ndarray, ...]

    @property
    def dim(self) -> int:
        return self.vectors[0].shape[0]


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    label: int
    instances: tuple[MultiScaleInstance, ...]
    # synthetic ground truth: locations where signal was planted (empty for real data)
    signal_locations: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ContractError(f"patient {self.patient_id}: label must be 0 or 1")
        if not self.instances:
            raise ContractError(f"patient {self.patient_id}: needs at least one instance")


@dataclass(frozen=True)
class Dataset:
    patients: tuple[PatientRecord, ...]
    scales: tuple[ScaleId, ...]

    @property
    def n_scales(self) -> int:
        return len(self.scales)

    @property
    def dim(self) -> int:
        return self.patients[0].instances[0].dim

    def __iter__(self):
        return iter(self.patients)

    def __len__(self):
        return len(self.patients)

    def patient(self, patient_id: str) -> PatientRecord:
        for p in self.patients:
            if p.patient_id == patient_id:
                return p
        raise ContractError(f"unknown patient id {patient_id!r}")


def default_scales(n_scales: int) -> tuple[ScaleId, ...]:
    if n_scales == 3:
        labels = DEFAULT_SCALE_LABELS
    else:
        labels = tuple(f"s{i}" for i in range(n_scales))
    return tuple(ScaleId(i, lab) for i, lab in enumerate(labels))


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a planted-signal multi-scale dataset.

    Every embedding is background prototype + Gaussian noise. Positive
    patients additionally receive ``signal_strength`` times a fixed unit
    direction at a ``signal_fraction`` subset of locations, added only
    at ``informative_scale`` -- so class evidence exists at exactly one
    scale.
    """

    n_patients_per_class: int = 10
    n_locations: int = 25
    dim: int = 32
    n_scales: int = 3
    informative_scale: int = 0
    signal_fraction: float = 0.5
    signal_strength: float = 1.0
    noise_level: float = 0.2
    n_prototypes: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.dim < 2:
            raise ConfigError(f"dim must be >= 2, got {self.dim}")
        if self.n_locations < 1:
            raise ConfigError(f"n_locations must be >= 1, got {self.n_locations}")
        if self.n_patients_per_class < 1:
            raise ConfigError(f"n_patients_per_class must be >= 1, got {self.n_patients_per_class}")
        if self.n_scales < 1:
            raise ConfigError(f"n_scales must be >= 1, got {self.n_scales}")
        if not 0 <= self.informative_scale < self.n_scales:
            raise ConfigError(f"informative_scale {self.informative_scale} not in [0, {self.n_scales})")
        if not 0.0 < self.signal_fraction <= 1.0:
            raise ConfigError(f"signal_fraction must be in (0, 1], got {self.signal_fraction}")
        if self.signal_fraction * self.n_locations < 1.0:
            raise ConfigError("signal_fraction * n_locations must be >= 1")
        if self.signal_strength < 0 or self.noise_level < 0:
            raise ConfigError("signal_strength and noise_level must be non-negative")
        if self.n_prototypes < 1:
            raise ConfigError(f"n_prototypes must be >= 1, got {self.n_prototypes}")


def signal_direction(spec: SyntheticSpec) -> np.ndarray:
    """The unit direction the generator plants; first draw of the stream."""
    rng = np.random.default_rng(spec.seed)
    u = rng.standard_normal(spec.dim)
    return u / np.linalg.norm(u)


def background_prototypes(spec: SyntheticSpec) -> np.ndarray:
    """The (n_prototypes, n_scales, dim) cluster centers the generator uses."""
    rng = np.random.default_rng(spec.seed)
    rng.standard_normal(spec.dim)  # skip the signal-direction draw
    return rng.standard_normal((spec.n_prototypes, spec.n_scales, spec.dim))


def _grid_xy(i: int, n_locations: int) -> tuple[float, float]:
    side = int(np.ceil(np.sqrt(n_locations)))
    return ((i % side) * GRID_CELL + GRID_CELL / 2, (i // side) * GRID_CELL + GRID_CELL / 2)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic planted-signal dataset; identical spec => identical bytes."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    u = rng.standard_normal(spec.dim)
    u /= np.linalg.norm(u)
    prototypes = rng.standard_normal((spec.n_prototypes, spec.n_scales, spec.dim))
    n_signal = max(1, int(round(spec.signal_fraction * spec.n_locations)))

    patients = []
    for label in (0, 1):
        for p in range(spec.n_patients_per_class):
            pid = f"{'pos' if label else 'neg'}{p:03d}"
            proto_of = rng.integers(0, spec.n_prototypes, size=spec.n_locations)
            noise = rng.standard_normal((spec.n_locations, spec.n_scales, spec.dim))
            emb = prototypes[proto_of] + spec.noise_level * noise
            signal_locs: frozenset[int] = frozenset()
            if label == 1:
                chosen = rng.choice(spec.n_locations, size=n_signal, replace=False)
                emb[chosen, spec.informative_scale, :] += spec.signal_strength * u
                signal_locs = frozenset(int(c) for c in chosen)
            instances = tuple(
                MultiScaleInstance(
                    location_id=loc,
                    xy=_grid_xy(loc, spec.n_locations),
                    vectors=tuple(emb[loc, s].copy() for s in range(spec.n_scales)),
                )
                for loc in range(spec.n_locations)
            )
            patients.append(PatientRecord(pid, label, instances, signal_locs))
    return Dataset(tuple(patients), default_scales(spec.n_scales))


def split_train_test(dataset: Dataset, n_test_per_class: int) -> tuple[Dataset, Dataset]:
    """Hold out the last ``n_test_per_class`` patients of each class."""
    train, test = [], []
    for label in (0, 1):
        group = [p for p in dataset if p.label == label]
        if len(group) <= n_test_per_class:
            raise ContractError(
                f"class {label} has {len(group)} patients, cannot hold out {n_test_per_class}"
            )
        cut = len(group) - n_test_per_class
        train.extend(group[:cut])
        test.extend(group[cut:])
    return Dataset(tuple(train), dataset.scales), Dataset(tuple(test), dataset.scales)


# --- on-disk format -------------------------------------------------------
#
# manifest.json: {"patients": [{patient_id, label, file, n_locations,
#                               n_scales, dim, scale_labels}, ...]}
# one CSV per patient: location_id,scale,x,y,e0,...,e{E-1}
# floats written with 17 significant digits (exact float64 round-trip)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def save_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    labels = [s.label for s in dataset.scales]
    signal = {}
    for p in dataset:
        fname = f"{p.patient_id}.csv"
        header = "location_id,scale,x,y," + ",".join(f"e{i}" for i in range(p.instances[0].dim))
        lines = [header]
        for inst in sorted(p.instances, key=lambda i: i.location_id):
            for s in range(dataset.n_scales):
                coords = f"{inst.location_id},{s},{_fmt(inst.xy[0])},{_fmt(inst.xy[1])}"
                lines.append(coords + "," + ",".join(_fmt(v) for v in inst.vectors[s]))
        (out / fname).write_text("\n".join(lines) + "\n")
        entries.append(
            {
                "patient_id": p.patient_id,
                "label": p.label,
                "file": fname,
                "n_locations": len(p.instances),
                "n_scales": dataset.n_scales,
                "dim": p.instances[0].dim,
                "scale_labels": labels,
            }
        )
        if p.signal_locations:
            signal[p.patient_id] = sorted(p.signal_locations)
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"patients": entries}, indent=2, sort_keys=True) + "\n")
    gt = out / "signal_locations.json"
    if signal:
        gt.write_text(json.dumps(signal, indent=2, sort_keys=True) + "\n")
    elif gt.exists():
        gt.unlink()
    return manifest


def load_dataset(manifest_path: str | Path) -> Dataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise IntegrityError(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or "patients" not in doc:
        raise FormatError("manifest must be an object with a 'patients' list")
    base = manifest_path.parent
    gt_path = base / "signal_locations.json"
    signal = json.loads(gt_path.read_text()) if gt_path.exists() else {}

    patients = []
    scales: tuple[ScaleId, ...] | None = None
    first_dim: int | None = None
    for entry in doc["patients"]:
        pid, label = entry["patient_id"], entry["label"]
        n_scales, dim = entry["n_scales"], entry["dim"]
        if first_dim is None:
            first_dim = dim
        elif dim != first_dim:
            raise FormatError(f"patient {pid}: dim {dim} differs from dataset dim {first_dim}")
        entry_scales = tuple(ScaleId(i, lab) for i, lab in enumerate(entry["scale_labels"]))
        if scales is None:
            scales = entry_scales
        elif scales != entry_scales:
            raise FormatError(f"patient {pid}: scale_labels differ from previous patients")
        path = base / entry["file"]
        if not path.exists():
            raise IntegrityError(f"patient {pid}: embedding file missing: {path}")
        rows = _read_patient_csv(path, pid, dim, entry_scales)
        instances = _rows_to_instances(rows, pid, n_scales)
        if len(instances) != entry["n_locations"]:
            raise IntegrityError(
                f"patient {pid}: manifest says {entry['n_locations']} locations, file has {len(instances)}"
            )
        patients.append(
            PatientRecord(pid, label, instances, frozenset(signal.get(pid, ())))
        )
    if scales is None:
        raise IntegrityError("manifest lists no patients")
    return Dataset(tuple(patients), scales)


def _read_patient_csv(path: Path, pid: str, dim: int, scales: tuple[ScaleId, ...]) -> list[PatchEmbedding]:
    lines = path.read_text().splitlines()
    expected = "location_id,scale,x,y," + ",".join(f"e{i}" for i in range(dim))
    if not lines or lines[0] != expected:
        raise FormatError(f"patient {pid}: unexpected CSV header in {path.name}")
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 4 + dim:
            raise FormatError(f"patient {pid}: row {ln} has {len(parts)} fields, expected {4 + dim}")
        try:
            loc, s = int(parts[0]), int(parts[1])
            xy = (float(parts[2]), float(parts[3]))
            vector = np.array([float(v) for v in parts[4:]], dtype=np.float64)
        except ValueError as e:
            raise FormatError(f"patient {pid}: row {ln} does not parse: {e}") from e
        if not 0 <= s < len(scales):
            raise IntegrityError(f"patient {pid}: row {ln} names unknown scale {s}")
        rows.append(PatchEmbedding(pid, loc, scales[s], xy, vector))
    return rows


def _rows_to_instances(rows: list[PatchEmbedding], pid: str, n_scales: int) -> tuple[MultiScaleInstance, ...]:
    by_loc: dict[int, dict[int, PatchEmbedding]] = {}
    for r in rows:
        slot = by_loc.setdefault(r.location_id, {})
        if r.scale.index in slot:
            raise IntegrityError(
                f"patient {pid}: duplicate entry for (location {r.location_id}, scale {r.scale.index})"
            )
        slot[r.scale.index] = r
    instances = []
    for loc in sorted(by_loc):
        slot = by_loc[loc]
        missing = [s for s in range(n_scales) if s not in slot]
        if missing:
            raise IntegrityError(
                f"patient {pid}: location {loc} is missing scale(s) {missing}"
            )
        xys = {slot[s].xy for s in range(n_scales)}
        if len(xys) != 1:
            raise IntegrityError(f"patient {pid}: location {loc} has inconsistent coordinates")
        instances.append(
            MultiScaleInstance(loc, slot[0].xy, tuple(slot[s].vector for s in range(n_scales)))
        )
    return tuple(instances)
