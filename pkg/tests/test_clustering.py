import numpy as np
import pytest

from crossmil.clustering import (
    assemble_bag,
    assign_dataset,
    cluster_dataset,
    kmeans,
    load_cluster_model,
    patient_rng,
    save_cluster_model,
)
from crossmil.data import SyntheticSpec, generate_synthetic
from crossmil.errors import ContractError


class TestKMeans:
    def test_identical_vectors_single_cluster(self):
        x = np.tile([1.5, -2.0, 0.25], (10, 1))
        result = kmeans(x, k=1, seed=0)
        assert result.sse_history[-1] == 0.0
        np.testing.assert_array_equal(result.centroids[0], [1.5, -2.0, 0.25])

    def test_two_blob_recovery_matches_nearest_centroid_oracle(self):
        rng = np.random.default_rng(17)
        blob_a = rng.normal([0, 0], 0.05, size=(25, 2))
        blob_b = rng.normal([10, 10], 0.05, size=(25, 2))
        x = np.vstack([blob_a, blob_b])
        result = kmeans(x, k=2, seed=3)
        # blob membership up to label permutation
        labels_a = set(result.labels[:25])
        labels_b = set(result.labels[25:])
        assert labels_a.isdisjoint(labels_b) and len(labels_a) == len(labels_b) == 1
        # exhaustive nearest-centroid check over every point
        for i in range(50):
            d = [np.linalg.norm(x[i] - c) for c in result.centroids]
            assert result.labels[i] == int(np.argmin(d))

    def test_sse_non_increasing(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            x = rng.uniform(-1, 1, size=(60, 5))
            hist = kmeans(x, k=4, seed=seed).sse_history
            assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))

    def test_k_exceeding_points_rejected(self):
        with pytest.raises(ContractError):
            kmeans(np.zeros((3, 2)), k=4)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(-1, 1, size=(40, 3))
        a = kmeans(x, k=5, seed=11)
        b = kmeans(x, k=5, seed=11)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.centroids, b.centroids)

    def test_eight_clusters_on_synthetic_prototypes(self):
        ds = generate_synthetic(
            SyntheticSpec(n_patients_per_class=10, n_locations=20, dim=16, seed=4, n_prototypes=8)
        )
        model = cluster_dataset(ds, scale_choice="5x", k=8, seed=2)
        assert len(set(model.assignment.values())) == 8


class TestClusterDataset:
    @pytest.fixture
    def dataset(self):
        return generate_synthetic(
            SyntheticSpec(n_patients_per_class=4, n_locations=12, dim=32, seed=6)
        )

    def test_records_clustering_scale(self, dataset):
        model = cluster_dataset(dataset, scale_choice="5x", k=4, seed=0)
        assert model.clustering_scale == "5x" and model.scale_index == 2

    def test_multi_concatenates_all_scales(self, dataset):
        model = cluster_dataset(dataset, scale_choice="multi", k=4, seed=0)
        assert model.centroids.shape[1] == 96  # 3 scales x 32 dims

    def test_same_seed_same_assignment(self, dataset):
        a = cluster_dataset(dataset, "20x", k=4, seed=5)
        b = cluster_dataset(dataset, "20x", k=4, seed=5)
        assert a.assignment == b.assignment

    def test_unknown_scale_rejected(self, dataset):
        with pytest.raises(ContractError):
            cluster_dataset(dataset, "40x", k=4)

    def test_fit_restricted_to_training_patients(self, dataset):
        fit_ids = {p.patient_id for p in dataset if p.patient_id.startswith("neg")}
        model = cluster_dataset(dataset, "5x", k=3, seed=1, fit_patients=fit_ids)
        # everyone is assigned even though only negatives shaped the centroids
        assert len(model.assignment) == len(dataset) * 12

    def test_assign_dataset_extends_without_refitting(self, dataset):
        from dataclasses import replace

        from crossmil.data import Dataset

        model = cluster_dataset(dataset, "5x", k=3, seed=1)
        extra = generate_synthetic(
            SyntheticSpec(n_patients_per_class=1, n_locations=5, dim=32, seed=99)
        )
        held_out = Dataset(
            tuple(replace(p, patient_id=f"held_{p.patient_id}") for p in extra),
            extra.scales,
        )
        extended = assign_dataset(model, held_out)
        np.testing.assert_array_equal(extended.centroids, model.centroids)
        assert len(extended.assignment) == len(model.assignment) + 10

    def test_serialization_round_trip(self, dataset, tmp_path):
        model = cluster_dataset(dataset, "multi", k=4, seed=3)
        loaded = load_cluster_model(save_cluster_model(model, tmp_path / "cm.json"))
        assert loaded.k == model.k
        assert loaded.clustering_scale == model.clustering_scale
        assert loaded.scale_index == model.scale_index
        assert loaded.assignment == model.assignment
        np.testing.assert_array_equal(loaded.centroids, model.centroids)


class TestBagAssembly:
    @pytest.fixture
    def setup(self):
        ds = generate_synthetic(
            SyntheticSpec(n_patients_per_class=4, n_locations=40, dim=16, seed=12)
        )
        model = cluster_dataset(ds, "5x", k=8, seed=0)
        return ds, model

    def test_full_quota_one_per_cluster(self, setup):
        ds, model = setup
        for p in ds:
            clusters_present = {
                model.cluster_of(p.patient_id, i.location_id) for i in p.instances
            }
            if len(clusters_present) < 8:
                continue
            bag = assemble_bag(p, model, 8, patient_rng((0,), p.patient_id))
            assert sorted(bag.cluster_of) == list(range(8))

    def test_multiple_of_k_gives_equal_quota(self, setup):
        ds, model = setup
        checked = 0
        for p in ds:
            sizes = {c: 0 for c in range(8)}
            for i in p.instances:
                sizes[model.cluster_of(p.patient_id, i.location_id)] += 1
            if min(sizes.values()) < 2:  # quota q=2 needs two instances everywhere
                continue
            counts = {c: 0 for c in range(8)}
            bag = assemble_bag(p, model, 16, patient_rng((1,), p.patient_id))
            for c in bag.cluster_of:
                counts[c] += 1
            assert all(v == 2 for v in counts.values())
            checked += 1
        assert checked > 0

    def test_single_instance_bag(self, setup):
        ds, model = setup
        bag = assemble_bag(ds.patients[0], model, 1, patient_rng((2,), "x"))
        assert len(bag.instances) == 1 and bag.bag_size == 1

    def test_bag_instances_belong_to_patient(self, setup):
        ds, model = setup
        for p in ds:
            bag = assemble_bag(p, model, 8, patient_rng((3,), p.patient_id))
            own = {i.location_id for i in p.instances}
            assert all(i.location_id in own for i in bag.instances)
            assert bag.patient_id == p.patient_id and bag.label == p.label

    def test_degenerate_single_cluster_redistributes_fully(self, setup):
        ds, model = setup
        p = ds.patients[0]
        # force every location of this patient into cluster 5
        forced = dict(model.assignment)
        for inst in p.instances:
            forced[(p.patient_id, inst.location_id)] = 5
        from crossmil.clustering import ClusterModel

        forced_model = ClusterModel(8, model.centroids, forced, model.clustering_scale, model.scale_index)
        bag = assemble_bag(p, forced_model, 8, patient_rng((4,), p.patient_id))
        assert bag.cluster_of == (5,) * 8
        assert len({i.location_id for i in bag.instances}) == 8  # without replacement

    def test_sampling_without_replacement_until_exhausted(self, setup):
        ds, model = setup
        p = ds.patients[1]
        bag = assemble_bag(p, model, 40, patient_rng((5,), p.patient_id))
        assert sorted(i.location_id for i in bag.instances) == sorted(
            i.location_id for i in p.instances
        )

    def test_oversized_bag_fills_with_replacement(self, setup):
        ds, model = setup
        bag = assemble_bag(ds.patients[2], model, 64, patient_rng((6,), "y"))
        assert len(bag.instances) == 64

    def test_deterministic_given_rng_seed(self, setup):
        ds, model = setup
        p = ds.patients[3]
        a = assemble_bag(p, model, 8, patient_rng((7,), p.patient_id))
        b = assemble_bag(p, model, 8, patient_rng((7,), p.patient_id))
        assert [i.location_id for i in a.instances] == [i.location_id for i in b.instances]

    def test_zero_bag_size_rejected(self, setup):
        ds, model = setup
        with pytest.raises(ContractError):
            assemble_bag(ds.patients[0], model, 0, patient_rng((8,), "z"))
