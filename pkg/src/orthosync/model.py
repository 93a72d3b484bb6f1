"""Instance generation for pairwise group synchronization.

Ground truth Z* is drawn Haar-uniformly on O(d) or SO(d); each pair i < j is
observed independently with probability p, and observed pairs carry the
measurement Y_ij = Z_i* Z_j*^T + sigma W_ij with iid standard Gaussian noise
entries. The block at (j, i) is always the transpose Y_ij^T, which keeps the
assembled nd x nd matrix symmetric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .group_ops import GroupElementSet, GroupKind

INSTANCE_SCHEMA_VERSION = 1

# Sub-stream indices hung off the master seed. Keeping truth, graph, noise and
# solver starts on separate streams means e.g. changing p cannot disturb Z*.
_TRUTH, _GRAPH, _NOISE, _SOLVER = range(4)


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent, reproducible generator derived from (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@dataclass(frozen=True)
class SyncParams:
    """Problem size and noise configuration for one synchronization instance."""

    n: int
    d: int
    p: float
    sigma: float
    group_kind: GroupKind = GroupKind.ORTHOGONAL
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 2:
            raise ValueError(f"n must be an integer >= 2 (got {self.n!r})")
        if not isinstance(self.d, (int, np.integer)) or self.d < 2:
            raise ValueError(f"d must be an integer >= 2 (got {self.d!r})")
        if not (0.0 < float(self.p) <= 1.0):
            raise ValueError(f"p must lie in (0, 1] (got {self.p!r})")
        if not (float(self.sigma) >= 0.0 and np.isfinite(self.sigma)):
            raise ValueError(f"sigma must be finite and >= 0 (got {self.sigma!r})")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer (got {self.seed!r})")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "group_kind", GroupKind(self.group_kind))
        object.__setattr__(self, "seed", int(self.seed))

    def theory_risk(self) -> float:
        """The exact asymptotic risk sigma^2 d(d-1) / (2np)."""
        return self.sigma**2 * self.d * (self.d - 1) / (2.0 * self.n * self.p)


def sample_ground_truth(params: SyncParams) -> GroupElementSet:
    """Draw n Haar-uniform elements of the configured group.

    QR of an iid Gaussian matrix with the R-diagonal sign correction is Haar
    on O(d). For the rotation kind, elements with determinant -1 get one
    column negated; right translation by a fixed reflection maps the
    det = -1 component Haar-uniformly onto SO(d).
    """
    rng = substream(params.seed, _TRUTH)
    g = rng.standard_normal((params.n, params.d, params.d))
    q, r = np.linalg.qr(g)
    diag = np.einsum("nii->ni", r)
    q = q * np.where(diag < 0, -1.0, 1.0)[:, None, :]
    if params.group_kind is GroupKind.ROTATION:
        q[np.linalg.det(q) < 0, :, -1] *= -1.0
    return GroupElementSet(q, params.group_kind)


@dataclass(eq=False)
class SyncInstance:
    """One observed instance: truth, observed pair lists, and their blocks.

    blocks[k] holds Y_ij for the pair (edge_i[k], edge_j[k]) with i < j; the
    reversed orientation is the transpose. Treat instances as immutable; the
    arrays are marked read-only.
    """

    params: SyncParams
    ztruth: GroupElementSet
    edge_i: np.ndarray
    edge_j: np.ndarray
    blocks: np.ndarray

    def __post_init__(self):
        ei = np.asarray(self.edge_i, dtype=np.int64)
        ej = np.asarray(self.edge_j, dtype=np.int64)
        bl = np.asarray(self.blocks, dtype=float)
        n, d = self.params.n, self.params.d
        if ei.shape != ej.shape or ei.ndim != 1:
            raise ValueError("edge_i and edge_j must be matching 1-d arrays")
        if bl.shape != (ei.size, d, d):
            raise ValueError(f"blocks must have shape ({ei.size}, {d}, {d}), got {bl.shape}")
        if ei.size and not ((0 <= ei).all() and (ej < n).all() and (ei < ej).all()):
            raise ValueError("edges must satisfy 0 <= i < j < n")
        if self.ztruth.n != n or self.ztruth.d != d:
            raise ValueError("ztruth does not match params")
        for arr in (ei, ej, bl):
            arr.setflags(write=False)
        self.edge_i, self.edge_j, self.blocks = ei, ej, bl

    @property
    def num_edges(self) -> int:
        return int(self.edge_i.size)

    @cached_property
    def degrees(self) -> np.ndarray:
        counts = np.bincount(
            np.concatenate([self.edge_i, self.edge_j]), minlength=self.params.n
        )
        counts.setflags(write=False)
        return counts

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.params.n, self.params.n), dtype=bool)
        a[self.edge_i, self.edge_j] = True
        a[self.edge_j, self.edge_i] = True
        a.setflags(write=False)
        return a

    @cached_property
    def _edge_lookup(self) -> dict:
        return {
            (int(i), int(j)): k
            for k, (i, j) in enumerate(zip(self.edge_i, self.edge_j))
        }

    def observation(self, i: int, j: int) -> np.ndarray:
        """The block Y_ij oriented i -> j; KeyError when the pair is unobserved."""
        if i == j:
            raise KeyError("diagonal pairs are never observed")
        key, flip = ((i, j), False) if i < j else ((j, i), True)
        block = self.blocks[self._edge_lookup[key]]
        return block.T if flip else block


def generate_instance(params: SyncParams) -> SyncInstance:
    """Sample truth, mask and noisy measurements for one instance."""
    ztruth = sample_ground_truth(params)
    iu, ju = np.triu_indices(params.n, k=1)
    keep = substream(params.seed, _GRAPH).random(iu.size) < params.p
    ei, ej = iu[keep].astype(np.int64), ju[keep].astype(np.int64)
    z = ztruth.elements
    blocks = np.einsum("eab,ecb->eac", z[ei], z[ej])
    if params.sigma > 0:
        blocks += params.sigma * substream(params.seed, _NOISE).standard_normal(blocks.shape)
    return SyncInstance(params, ztruth, ei, ej, blocks)


def assemble_masked_matrix(instance: SyncInstance) -> np.ndarray:
    """Dense symmetric (nd, nd) matrix of observed blocks.

    Block (i, j) holds Y_ij for observed i < j, block (j, i) its transpose;
    unobserved pairs and the diagonal blocks are zero.
    """
    n, d = instance.params.n, instance.params.d
    c = np.zeros((n, d, n, d))
    c[instance.edge_i, :, instance.edge_j, :] = instance.blocks
    c[instance.edge_j, :, instance.edge_i, :] = np.swapaxes(instance.blocks, 1, 2)
    return c.reshape(n * d, n * d)


def solver_stream(params: SyncParams) -> np.random.Generator:
    """Generator reserved for solver internals (deterministic eigensolver starts)."""
    return substream(params.seed, _SOLVER)


def instance_to_dict(instance: SyncInstance) -> dict:
    """Self-describing JSON payload: parameters, edge list, row-major blocks."""
    p = instance.params
    return {
        "schema_version": INSTANCE_SCHEMA_VERSION,
        "params": {
            "n": p.n,
            "d": p.d,
            "p": p.p,
            "sigma": p.sigma,
            "group": p.group_kind.value,
            "seed": p.seed,
        },
        "ztruth": instance.ztruth.elements.tolist(),
        "edges": np.stack([instance.edge_i, instance.edge_j], axis=1).tolist(),
        "blocks": instance.blocks.tolist(),
    }


def instance_from_dict(payload: dict) -> SyncInstance:
    version = payload.get("schema_version")
    if version != INSTANCE_SCHEMA_VERSION:
        raise ValueError(f"unsupported instance schema_version {version!r}")
    raw = payload["params"]
    params = SyncParams(
        n=raw["n"],
        d=raw["d"],
        p=raw["p"],
        sigma=raw["sigma"],
        group_kind=GroupKind(raw["group"]),
        seed=raw["seed"],
    )
    edges = np.asarray(payload["edges"], dtype=np.int64).reshape(-1, 2)
    return SyncInstance(
        params=params,
        ztruth=GroupElementSet(np.asarray(payload["ztruth"], dtype=float), params.group_kind),
        edge_i=edges[:, 0],
        edge_j=edges[:, 1],
        blocks=np.asarray(payload["blocks"], dtype=float).reshape(-1, params.d, params.d),
    )


def save_instance(instance: SyncInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(instance), fh)
        fh.write("\n")


def load_instance(path) -> SyncInstance:
    with open(path, encoding="utf-8") as fh:
        return instance_from_dict(json.load(fh))
