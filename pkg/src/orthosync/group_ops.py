"""Core operations on the orthogonal and rotation groups.

Polar projections onto O(d) and SO(d), Procrustes alignment of stacked
group elements, and the squared-error losses used by the synchronization
estimators and experiments.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

# Relative rank tolerance: a matrix counts as rank deficient when its smallest
# singular value does not exceed RANK_TOL times its largest.
RANK_TOL = 1e-12

# Tolerance for membership checks (orthonormality residual, |det - 1|).
ORTHO_TOL = 1e-10


class GroupKind(str, Enum):
    """Which matrix group the elements live on."""

    ORTHOGONAL = "orthogonal"
    ROTATION = "rotation"


class RankDeficient(ValueError):
    """The input is numerically rank deficient; its polar factor is undefined."""


def orthogonality_defect(q: np.ndarray) -> float:
    """Frobenius norm of Q^T Q - I, batched over leading axes."""
    q = np.asarray(q, dtype=float)
    gram = np.swapaxes(q, -1, -2) @ q
    gram = gram - np.eye(q.shape[-1])
    return float(np.sqrt((gram**2).sum(axis=(-2, -1))).max())


def is_orthogonal(q: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    return orthogonality_defect(q) <= tol


def is_rotation(q: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    if not is_orthogonal(q, tol):
        return False
    dets = np.linalg.det(np.asarray(q, dtype=float))
    return bool(np.abs(dets - 1.0).max() <= tol)


def _checked_square(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("matrix entries must be finite")
    return x


def polar_factor(x) -> np.ndarray:
    """Closest orthogonal matrix to x in Frobenius norm.

    Computes U V^T from the SVD x = U D V^T. Raises RankDeficient when the
    smallest singular value fails the relative rank tolerance, in which case
    callers are expected to fall back to their previous iterate.
    """
    x = _checked_square(x)
    u, s, vt = np.linalg.svd(x)
    if s[-1] <= RANK_TOL * s[0]:
        raise RankDeficient(
            f"singular values span {s[0]:.3e}..{s[-1]:.3e}; polar factor undefined"
        )
    return u @ vt


def special_polar_factor(x) -> np.ndarray:
    """Closest rotation matrix to x in Frobenius norm (Kabsch correction).

    Equals polar_factor(x) whenever det(x) > 0. Otherwise the singular
    vector pair of the smallest singular value is reflected, which is the
    determinant-corrected product U diag(1, ..., 1, det(UV^T)) V^T.
    """
    x = _checked_square(x)
    u, s, vt = np.linalg.svd(x)
    if s[-1] <= RANK_TOL * s[0]:
        raise RankDeficient(
            f"singular values span {s[0]:.3e}..{s[-1]:.3e}; polar factor undefined"
        )
    # Singular values come back descending, so the correction lands on the
    # smallest one, in the last position.
    sign = 1.0 if float(np.linalg.det(u)) * float(np.linalg.det(vt)) > 0 else -1.0
    u = u.copy()
    u[:, -1] *= sign
    return u @ vt


def _polar_blocks(blocks: np.ndarray, kind: GroupKind, rank_tol: float = RANK_TOL):
    """Batched polar projection of an (n, d, d) stack.

    Returns (projected, deficient). Rows flagged deficient hold unusable
    values and must be replaced by the caller (previous iterate, identity).
    """
    u, s, vt = np.linalg.svd(blocks)
    deficient = s[:, -1] <= rank_tol * s[:, 0]
    if kind is GroupKind.ROTATION:
        signs = np.where(np.linalg.det(u) * np.linalg.det(vt) > 0, 1.0, -1.0)
        u = u.copy()
        u[:, :, -1] *= signs[:, None]
    return u @ vt, deficient


@dataclass(frozen=True)
class GroupElementSet:
    """A stack of n group elements, stored as an (n, d, d) read-only array.

    Every element must be orthogonal within ORTHO_TOL; the rotation kind
    additionally requires every determinant to equal 1 within ORTHO_TOL.
    """

    elements: np.ndarray
    group_kind: GroupKind

    def __post_init__(self):
        el = np.array(self.elements, dtype=float)
        if el.ndim != 3 or el.shape[1] != el.shape[2]:
            raise ValueError(f"expected an (n, d, d) stack, got shape {el.shape}")
        if el.shape[0] < 1:
            raise ValueError("need at least one element")
        kind = GroupKind(self.group_kind)
        defect = orthogonality_defect(el)
        if defect > ORTHO_TOL:
            raise ValueError(f"orthogonality defect {defect:.3e} exceeds {ORTHO_TOL}")
        if kind is GroupKind.ROTATION:
            worst = float(np.abs(np.linalg.det(el) - 1.0).max())
            if worst > ORTHO_TOL:
                raise ValueError(f"rotation kind requires det = 1; worst |det-1| = {worst:.3e}")
        el.setflags(write=False)
        object.__setattr__(self, "elements", el)
        object.__setattr__(self, "group_kind", kind)

    @property
    def n(self) -> int:
        return self.elements.shape[0]

    @property
    def d(self) -> int:
        return self.elements.shape[1]

    def right_multiplied(self, b: np.ndarray) -> "GroupElementSet":
        """The set with every element right-multiplied by the same b."""
        return GroupElementSet(self.elements @ np.asarray(b, dtype=float), self.group_kind)


def _overlap_blocks(zb: np.ndarray, sb: np.ndarray) -> np.ndarray:
    """M = (1/n) sum_i Z_i^T Z_i^*, the alignment cross matrix."""
    return np.einsum("nca,ncb->ab", zb, sb) / zb.shape[0]


def _trace_maximizer(m: np.ndarray, kind: GroupKind):
    """argmax_B Tr(M B) over the group, and the maximal trace.

    Closed form via the SVD M = U D V^T: B = V U^T over O(d); over SO(d) the
    smallest singular value pair is determinant corrected. Rank-deficient M is
    fine, ties resolve to whatever basis the SVD routine returns.
    """
    u, s, vt = np.linalg.svd(m)
    v = vt.T
    if kind is GroupKind.ROTATION:
        sign = 1.0 if float(np.linalg.det(u)) * float(np.linalg.det(vt)) > 0 else -1.0
        v = v.copy()
        v[:, -1] *= sign
        trace = float(s[:-1].sum() + sign * s[-1])
    else:
        trace = float(s.sum())
    return v @ u.T, trace


def _loss_blocks(zb: np.ndarray, sb: np.ndarray, kind: GroupKind) -> float:
    m = _overlap_blocks(zb, sb)
    _, trace = _trace_maximizer(m, kind)
    return max(0.0, 2.0 * (zb.shape[1] - trace))


def _pairwise_blocks(zb: np.ndarray, sb: np.ndarray) -> float:
    m = _overlap_blocks(zb, sb)
    return max(0.0, 2.0 * (zb.shape[1] - float((m**2).sum())))


def _resolve_kind(z: GroupElementSet, zstar: GroupElementSet, group_kind) -> GroupKind:
    if z.elements.shape != zstar.elements.shape:
        raise ValueError(
            f"mismatched stacks: {z.elements.shape} vs {zstar.elements.shape}"
        )
    if group_kind is not None:
        return GroupKind(group_kind)
    if z.group_kind is not zstar.group_kind:
        raise ValueError("sets have different group kinds; pass group_kind explicitly")
    return z.group_kind


def align(z: GroupElementSet, zstar: GroupElementSet, group_kind=None) -> np.ndarray:
    """Best global right factor B over the group, so that Z_i^* B matches Z_i.

    Maximizes Tr(M B) with M = (1/n) sum_i Z_i^T Z_i^*; over O(d) that is
    B = V U^T for M = U D V^T, over SO(d) the determinant-corrected version.
    """
    kind = _resolve_kind(z, zstar, group_kind)
    b, _ = _trace_maximizer(_overlap_blocks(z.elements, zstar.elements), kind)
    return b


def loss(z: GroupElementSet, zstar: GroupElementSet, group_kind=None) -> float:
    """Mean squared alignment error min_B (1/n) sum_i ||Z_i - Z_i^* B||_F^2.

    Evaluated through the closed form 2 (d - max_B Tr(M B)) with the align
    maximizer; the value lies in [0, 4d].
    """
    kind = _resolve_kind(z, zstar, group_kind)
    return _loss_blocks(z.elements, zstar.elements, kind)


def pairwise_loss(z: GroupElementSet, zstar: GroupElementSet) -> float:
    """Mean squared error of all relative measurements Z_i Z_j^T.

    (1/n^2) sum_ij ||Z_i Z_j^T - Z_i^* Z_j^*T||_F^2, computed through the
    identity 2 (d - ||M||_F^2); never exceeds 2 loss(Z, Z^*).
    """
    if z.elements.shape != zstar.elements.shape:
        raise ValueError(
            f"mismatched stacks: {z.elements.shape} vs {zstar.elements.shape}"
        )
    return _pairwise_blocks(z.elements, zstar.elements)
