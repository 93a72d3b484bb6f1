import json

import numpy as np
import pytest

import reference
from orthosync.group_ops import GroupElementSet, GroupKind, orthogonality_defect
from orthosync.model import (
    INSTANCE_SCHEMA_VERSION,
    SyncInstance,
    SyncParams,
    assemble_masked_matrix,
    generate_instance,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    sample_ground_truth,
    save_instance,
    substream,
)


def make_params(**overrides):
    base = dict(n=10, d=3, p=1.0, sigma=0.5, group_kind=GroupKind.ORTHOGONAL, seed=42)
    base.update(overrides)
    return SyncParams(**base)


def manual_instance(n, d, edges, sigma=0.0, seed=3):
    """Instance over an explicit edge list, blocks from the exact signal."""
    params = SyncParams(n=n, d=d, p=0.5, sigma=sigma, group_kind=GroupKind.ORTHOGONAL, seed=seed)
    truth = sample_ground_truth(params)
    ei = np.array([i for i, _ in edges], dtype=np.int64)
    ej = np.array([j for _, j in edges], dtype=np.int64)
    blocks = np.stack([truth.elements[i] @ truth.elements[j].T for i, j in edges])
    return SyncInstance(params=params, ztruth=truth, edge_i=ei, edge_j=ej, blocks=blocks)


class TestSyncParams:
    @pytest.mark.parametrize(
        "overrides",
        [
            {"n": 1},
            {"n": 2.5},
            {"d": 1},
            {"p": 0.0},
            {"p": 1.5},
            {"sigma": -0.1},
            {"sigma": float("inf")},
            {"seed": -1},
            {"seed": 2**64},
        ],
    )
    def test_rejects_bad_fields(self, overrides):
        with pytest.raises(ValueError):
            make_params(**overrides)

    def test_theory_risk(self):
        assert make_params(n=1000, d=3, p=1.0, sigma=1.0).theory_risk() == pytest.approx(0.003)
        assert make_params(sigma=0.0).theory_risk() == 0.0
        p = make_params(n=100, d=2, p=0.5, sigma=2.0)
        assert p.theory_risk() == pytest.approx(4.0 * 2.0 * 1.0 / (2.0 * 100.0 * 0.5))


class TestGroundTruth:
    def test_orthogonal_invariants(self):
        truth = sample_ground_truth(make_params(n=40))
        assert orthogonality_defect(truth.elements) <= 1e-10

    def test_rotation_determinants(self):
        truth = sample_ground_truth(make_params(n=40, group_kind=GroupKind.ROTATION))
        dets = np.linalg.det(truth.elements)
        assert np.abs(dets - 1.0).max() <= 1e-10

    def test_deterministic(self):
        a = sample_ground_truth(make_params())
        b = sample_ground_truth(make_params())
        assert np.array_equal(a.elements, b.elements)
        c = sample_ground_truth(make_params(seed=43))
        assert not np.array_equal(a.elements, c.elements)


class TestGenerateInstance:
    def test_noiseless_blocks_exact(self):
        inst = generate_instance(make_params(sigma=0.0))
        truth = inst.ztruth.elements
        for k in range(inst.edge_i.size):
            i, j = int(inst.edge_i[k]), int(inst.edge_j[k])
            assert np.abs(inst.blocks[k] - truth[i] @ truth[j].T).max() <= 1e-14
            gram = inst.blocks[k].T @ inst.blocks[k]
            assert np.linalg.norm(gram - np.eye(3)) <= 1e-10

    def test_full_graph_pair_count_and_degrees(self):
        inst = generate_instance(make_params(n=15, p=1.0))
        assert inst.edge_i.size == 15 * 14 // 2
        assert np.array_equal(inst.degrees, np.full(15, 14))

    def test_edge_count_concentrates(self):
        inst = generate_instance(make_params(n=2000, d=2, p=0.3, sigma=0.0))
        pairs = 2000 * 1999 // 2
        mean = pairs * 0.3
        sd = np.sqrt(pairs * 0.3 * 0.7)
        assert abs(inst.edge_i.size - mean) <= 4.0 * sd

    def test_noise_level(self):
        sigma = 0.25
        inst = generate_instance(make_params(n=60, sigma=sigma, seed=11))
        truth = inst.ztruth.elements
        signal = np.stack(
            [truth[i] @ truth[j].T for i, j in zip(inst.edge_i, inst.edge_j)]
        )
        resid = inst.blocks - signal
        assert resid.std() == pytest.approx(sigma, rel=0.05)

    def test_deterministic(self):
        a = generate_instance(make_params())
        b = generate_instance(make_params())
        assert np.array_equal(a.blocks, b.blocks)
        assert np.array_equal(a.edge_i, b.edge_i)

    def test_observation_symmetry(self):
        inst = generate_instance(make_params(n=8, p=0.7, seed=5))
        k = inst.edge_i.size // 2
        i, j = int(inst.edge_i[k]), int(inst.edge_j[k])
        assert np.array_equal(inst.observation(j, i), inst.observation(i, j).T)
        with pytest.raises(KeyError):
            inst.observation(2, 2)

    def test_unobserved_pair_raises(self):
        inst = manual_instance(4, 2, [(0, 1), (1, 2)])
        with pytest.raises(KeyError):
            inst.observation(0, 3)

    def test_edge_validation(self):
        params = make_params(n=4, d=2)
        truth = sample_ground_truth(params)
        with pytest.raises(ValueError):
            SyncInstance(
                params=params,
                ztruth=truth,
                edge_i=np.array([1]),
                edge_j=np.array([0]),
                blocks=np.zeros((1, 2, 2)),
            )


class TestAssembly:
    def test_two_node_layout(self):
        inst = manual_instance(2, 3, [(0, 1)])
        m = assemble_masked_matrix(inst)
        z = inst.ztruth.elements
        expected = np.zeros((6, 6))
        expected[:3, 3:] = z[0] @ z[1].T
        expected[3:, :3] = (z[0] @ z[1].T).T
        assert np.array_equal(m, expected)

    def test_symmetric_with_zero_diagonal_blocks(self):
        inst = generate_instance(make_params(n=12, p=0.6, seed=9))
        m = assemble_masked_matrix(inst)
        assert np.linalg.norm(m - m.T) <= 1e-12
        d = inst.params.d
        for i in range(12):
            assert np.array_equal(m[i * d : (i + 1) * d, i * d : (i + 1) * d], np.zeros((d, d)))

    def test_matches_naive_assembly(self):
        inst = generate_instance(make_params(n=10, p=0.5, sigma=0.8, seed=21))
        assert np.array_equal(assemble_masked_matrix(inst), reference.naive_masked_matrix(inst))

    def test_isolated_node_row_is_zero(self):
        inst = manual_instance(5, 2, [(0, 1), (0, 2), (1, 2)])
        m = assemble_masked_matrix(inst)
        assert np.array_equal(m[6:, :], np.zeros((4, 10)))
        assert np.array_equal(inst.degrees[3:], np.zeros(2, dtype=inst.degrees.dtype))

    def test_noiseless_full_graph_rank_d(self):
        inst = generate_instance(make_params(n=30, sigma=0.0, p=1.0))
        m = assemble_masked_matrix(inst) + np.eye(30 * 3)
        evals = np.linalg.eigvalsh(m)
        assert np.all(evals[-3:] > 29.9)
        assert np.abs(evals[:-3]).max() <= 1e-9 * 30


class TestSerialization:
    def test_round_trip_bitwise(self, tmp_path):
        inst = generate_instance(make_params(n=9, p=0.7, sigma=0.3, group_kind=GroupKind.ROTATION))
        path = tmp_path / "instance.json"
        save_instance(inst, path)
        loaded = load_instance(path)
        assert loaded.params == inst.params
        assert np.array_equal(loaded.ztruth.elements, inst.ztruth.elements)
        assert loaded.ztruth.group_kind is GroupKind.ROTATION
        assert np.array_equal(loaded.edge_i, inst.edge_i)
        assert np.array_equal(loaded.edge_j, inst.edge_j)
        assert np.array_equal(loaded.blocks, inst.blocks)

    def test_payload_is_versioned_json(self, tmp_path):
        inst = generate_instance(make_params(n=5))
        payload = instance_to_dict(inst)
        assert payload["schema_version"] == INSTANCE_SCHEMA_VERSION
        text = json.dumps(payload)
        assert instance_from_dict(json.loads(text)).params == inst.params

    def test_unknown_schema_rejected(self):
        inst = generate_instance(make_params(n=5))
        payload = instance_to_dict(inst)
        payload["schema_version"] = 999
        with pytest.raises(ValueError):
            instance_from_dict(payload)


class TestStreams:
    def test_substreams_differ_and_repeat(self):
        a = substream(7, 0).standard_normal(4)
        b = substream(7, 1).standard_normal(4)
        assert not np.array_equal(a, b)
        assert np.array_equal(a, substream(7, 0).standard_normal(4))

    def test_truth_unchanged_by_sigma(self):
        # Graph, noise, and truth draw from separate substreams, so changing
        # sigma must not move the ground truth or the graph.
        a = generate_instance(make_params(sigma=0.1))
        b = generate_instance(make_params(sigma=2.0))
        assert np.array_equal(a.ztruth.elements, b.ztruth.elements)
        assert np.array_equal(a.edge_i, b.edge_i)
