"""Phenotype clustering and cluster-balanced bag assembly.

Patches are grouped by k-means over their embeddings (a single scale or
all scales concatenated); bags then draw instances evenly from the
clusters so every phenotype pattern is represented per patient.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, MultiScaleInstance, PatientRecord
from .errors import ContractError, FormatError

MULTI_SCALE = "multi"


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    sse_history: tuple[float, ...]
    n_iter: int


def _sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        (x * x).sum(axis=1)[:, None]
        - 2.0 * x @ centroids.T
        + (centroids * centroids).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = _sq_distances(x, centroids[:1]).min(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centroids[j] = x[idx]
        d2 = np.minimum(d2, _sq_distances(x, centroids[j : j + 1])[:, 0])
    return centroids


def kmeans(
    vectors: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-7,
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are re-seeded to the point farthest from its current
    centroid, which keeps the within-cluster SSE non-increasing.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"kmeans expects an (n, d) array, got shape {x.shape}")
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if k > x.shape[0]:
        raise ContractError(f"k={k} exceeds the number of vectors ({x.shape[0]})")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(x, k, rng)
    sse_history: list[float] = []
    labels = np.zeros(x.shape[0], dtype=np.int64)
    for it in range(max_iter):
        d2 = _sq_distances(x, centroids)
        labels = d2.argmin(axis=1)
        point_d2 = d2[np.arange(x.shape[0]), labels]
        for c in range(k):
            if not np.any(labels == c):
                far = int(point_d2.argmax())
                centroids[c] = x[far]
                labels[far] = c
                point_d2[far] = 0.0
        sse_history.append(float(point_d2.sum()))
        new_centroids = np.empty_like(centroids)
        for c in range(k):
            new_centroids[c] = x[labels == c].mean(axis=0)
        shift = np.linalg.norm(new_centroids - centroids, axis=1).max()
        centroids = new_centroids
        if shift < tol:
            break
    return KMeansResult(centroids, labels, tuple(sse_history), len(sse_history))


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignment: dict[tuple[str, int], int]
    clustering_scale: str  # a scale label, or "multi"
    scale_index: int | None  # None when clustering_scale == "multi"

    def cluster_of(self, patient_id: str, location_id: int) -> int:
        try:
            return self.assignment[(patient_id, location_id)]
        except KeyError:
            raise ContractError(
                f"({patient_id}, {location_id}) has no cluster assignment; "
                "run assign_dataset on this dataset first"
            ) from None


def clustering_feature(instance: MultiScaleInstance, scale_index: int | None) -> np.ndarray:
    if scale_index is None:
        return np.concatenate(instance.vectors)
    return instance.vectors[scale_index]


def _resolve_scale_choice(dataset: Dataset, scale_choice) -> tuple[str, int | None]:
    if scale_choice == MULTI_SCALE:
        return MULTI_SCALE, None
    if isinstance(scale_choice, int):
        if not 0 <= scale_choice < dataset.n_scales:
            raise ContractError(f"scale index {scale_choice} not in [0, {dataset.n_scales})")
        return dataset.scales[scale_choice].label, scale_choice
    for s in dataset.scales:
        if s.label == scale_choice:
            return s.label, s.index
    raise ContractError(
        f"unknown scale {scale_choice!r}; expected one of "
        f"{[s.label for s in dataset.scales] + [MULTI_SCALE]}"
    )


def cluster_dataset(
    dataset: Dataset,
    scale_choice,
    k: int,
    seed: int = 0,
    fit_patients: set[str] | None = None,
) -> ClusterModel:
    """Fit k-means on the chosen scale's vectors and assign every location.

    ``fit_patients`` restricts centroid fitting (e.g. to training
    patients); all patients in ``dataset`` still get nearest-centroid
    assignments, so held-out patients never influence the centroids.
    """
    label, scale_index = _resolve_scale_choice(dataset, scale_choice)
    fit_ids = fit_patients if fit_patients is not None else {p.patient_id for p in dataset}
    fit_vectors = [
        clustering_feature(inst, scale_index)
        for p in dataset
        if p.patient_id in fit_ids
        for inst in p.instances
    ]
    if not fit_vectors:
        raise ContractError("no vectors to cluster (empty fit set)")
    result = kmeans(np.asarray(fit_vectors), k, seed=seed)
    model = ClusterModel(k, result.centroids, {}, label, scale_index)
    return assign_dataset(model, dataset)


def assign_dataset(model: ClusterModel, dataset: Dataset) -> ClusterModel:
    """Extend a fitted model with nearest-centroid assignments for ``dataset``."""
    assignment = dict(model.assignment)
    for p in dataset:
        feats = np.asarray([clustering_feature(i, model.scale_index) for i in p.instances])
        labels = _sq_distances(feats, model.centroids).argmin(axis=1)
        for inst, c in zip(p.instances, labels):
            assignment[(p.patient_id, inst.location_id)] = int(c)
    return ClusterModel(model.k, model.centroids, assignment, model.clustering_scale, model.scale_index)


def save_cluster_model(model: ClusterModel, path: str | Path) -> Path:
    path = Path(path)
    doc = {
        "k": model.k,
        "clustering_scale": model.clustering_scale,
        "scale_index": model.scale_index,
        "centroids": model.centroids.tolist(),
        "assignment": [[pid, loc, c] for (pid, loc), c in sorted(model.assignment.items())],
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def load_cluster_model(path: str | Path) -> ClusterModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"cluster model file is not valid JSON: {e}") from e
    try:
        return ClusterModel(
            k=doc["k"],
            centroids=np.asarray(doc["centroids"], dtype=np.float64),
            assignment={(pid, int(loc)): int(c) for pid, loc, c in doc["assignment"]},
            clustering_scale=doc["clustering_scale"],
            scale_index=doc["scale_index"],
        )
    except KeyError as e:
        raise FormatError(f"cluster model file is missing key {e}") from e


@dataclass(frozen=True)
class Bag:
    """Cluster-balanced instance sample for one patient."""

    patient_id: str
    label: int
    instances: tuple[MultiScaleInstance, ...]
    cluster_of: tuple[int, ...]
    bag_size: int


def patient_rng(seed_parts: tuple[int, ...], patient_id: str) -> np.random.Generator:
    """Per-patient stream derived from run seeds plus a stable id hash."""
    return np.random.default_rng([*seed_parts, zlib.crc32(patient_id.encode())])


def assemble_bag(
    patient: PatientRecord,
    model: ClusterModel,
    bag_size: int,
    rng: np.random.Generator,
) -> Bag:
    """Draw ``bag_size`` instances, spread evenly over phenotype clusters.

    Target quota is bag_size/k per cluster; quotas of clusters this
    patient does not populate are redistributed round-robin. When
    bag_size < k, that many distinct populated clusters are chosen
    uniformly, one instance each. Sampling is without replacement until
    the patient's instances run out.
    """
    if bag_size < 1:
        raise ContractError(f"bag_size must be >= 1, got {bag_size}")
    if not patient.instances:
        raise ContractError(f"patient {patient.patient_id} has no instances")
    k = model.k
    members: dict[int, list[int]] = {c: [] for c in range(k)}
    for idx, inst in enumerate(patient.instances):
        members[model.cluster_of(patient.patient_id, inst.location_id)].append(idx)
    populated = [c for c in range(k) if members[c]]

    quotas = np.zeros(k, dtype=np.int64)
    if bag_size >= k:
        quotas[:] = bag_size // k
        extra = bag_size % k
        if extra:
            quotas[rng.permutation(k)[:extra]] += 1
    else:
        chosen = rng.choice(populated, size=min(bag_size, len(populated)), replace=False)
        quotas[chosen] = 1
        leftover = bag_size - len(chosen)
        for i in range(leftover):
            quotas[populated[i % len(populated)]] += 1

    # round-robin redistribution of quotas stuck on unpopulated clusters
    stranded = int(quotas[[c for c in range(k) if c not in populated]].sum()) if populated else 0
    for c in range(k):
        if c not in members or not members[c]:
            quotas[c] = 0
    for i in range(stranded):
        quotas[populated[i % len(populated)]] += 1

    remaining = {c: list(members[c]) for c in populated}
    picked: list[int] = []
    for c in populated:
        take = min(int(quotas[c]), len(remaining[c]))
        if take:
            sel = rng.choice(len(remaining[c]), size=take, replace=False)
            for j in sorted(sel, reverse=True):
                picked.append(remaining[c].pop(int(j)))
    # shortfall: keep cycling populated clusters that still have instances
    while len(picked) < bag_size and any(remaining.values()):
        for c in populated:
            if len(picked) == bag_size:
                break
            if remaining[c]:
                j = int(rng.integers(len(remaining[c])))
                picked.append(remaining[c].pop(j))
    # patient has fewer instances than bag_size: top up with replacement
    while len(picked) < bag_size:
        c = populated[int(rng.integers(len(populated)))]
        picked.append(members[c][int(rng.integers(len(members[c])))])

    instances = tuple(patient.instances[i] for i in picked)
    clusters = tuple(
        model.cluster_of(patient.patient_id, inst.location_id) for inst in instances
    )
    return Bag(patient.patient_id, patient.label, instances, clusters, bag_size)
