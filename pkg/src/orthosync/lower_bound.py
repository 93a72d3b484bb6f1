"""Bayesian lower-bound laboratory.

A rotation Q(r) is built around the identity from its d(d-1)/2 free
upper-triangular entries r by solving, row by row, for the remaining
lower-triangular entries so that the rows stay orthonormal. A smooth
compactly supported prior over the free entries and the van Trees
information quantities (with an exactly known trace identity) turn the
local parametrization into a numerical Bayes-risk floor.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.linalg import block_diag


class InfeasibleParams(ValueError):
    """Free entries violate the feasibility hypothesis of the construction."""


class IdentityViolation(RuntimeError):
    """The exact information-trace identity failed; suspect a Jacobian or
    Kronecker-ordering bug."""


# Central finite-difference step for all Jacobians.
FD_STEP = 1e-6

# Relative tolerance of the exact trace identity check.
IDENTITY_RTOL = 1e-6


def feasible_radius(d: int) -> float:
    """Half-width 1/(8 d^{5/2}) of the feasible box for each free entry."""
    return 1.0 / (8.0 * float(d) ** 2.5)


def pair_indices(d: int) -> list:
    """Row-major ordering of the index pairs (a, b), a < b, fixing the layout
    of every r vector."""
    return [(a, b) for a in range(d) for b in range(a + 1, d)]


def num_pairs(d: int) -> int:
    return d * (d - 1) // 2


@dataclass(frozen=True)
class PriorParams:
    """Free upper-triangular entries r of the rotation construction."""

    d: int
    r: np.ndarray

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or self.d < 2:
            raise ValueError(f"d must be an integer >= 2 (got {self.d!r})")
        r = np.array(self.r, dtype=float).reshape(-1)
        if r.size != num_pairs(self.d):
            raise ValueError(
                f"r must have d(d-1)/2 = {num_pairs(self.d)} entries, got {r.size}"
            )
        if not np.isfinite(r).all():
            raise InfeasibleParams("r entries must be finite")
        bound = feasible_radius(self.d)
        worst = float(np.abs(r).max()) if r.size else 0.0
        # Tiny relative headroom so r at the boundary survives a +step/-step
        # round trip in the finite-difference code.
        if worst > bound * (1.0 + 1e-12):
            raise InfeasibleParams(
                f"max |r_ab| = {worst:.6e} exceeds the feasible radius {bound:.6e}"
            )
        r.setflags(write=False)
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "r", r)


@dataclass(frozen=True)
class PriorRotation:
    """A constructed rotation: the input entries and the full matrix Q(r)."""

    params: PriorParams
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def s(self) -> np.ndarray:
        """The solved entries: lower triangle including the diagonal."""
        return np.tril(self.matrix)

    def min_diagonal(self) -> float:
        return float(np.diag(self.matrix).min())

    def max_abs_subdiagonal(self) -> float:
        d = self.params.d
        below = self.matrix[np.tril_indices(d, k=-1)]
        return float(np.abs(below).max()) if below.size else 0.0


def _upper_from_r(d: int, r: np.ndarray) -> np.ndarray:
    up = np.zeros((d, d))
    up[np.triu_indices(d, k=1)] = r
    return up


def construct_Q(params: PriorParams) -> PriorRotation:
    """Solve the row-orthonormality recursion for the rotation Q(r).

    Row 1 closes with s_11 = sqrt(1 - sum_b r_1b^2). Each later row k
    substitutes S_{k-1} = -s_kk Q_{k-1}^{-1} R_{k-1} - Q_{k-1}^{-1} v_{k-1}
    into the unit-norm equation, giving a quadratic in s_kk whose larger
    root is taken.
    """
    d = params.d
    up = _upper_from_r(d, params.r)
    q = up.copy()
    first = 1.0 - float(up[0, 1:] @ up[0, 1:])
    if first <= 0.0:
        raise InfeasibleParams("row 1 has no real diagonal entry")
    q[0, 0] = np.sqrt(first)
    for k in range(1, d):
        qk = q[:k, :k]
        rk = up[:k, k]
        vk = up[:k, k + 1 :] @ up[k, k + 1 :]
        cond = np.linalg.cond(qk)
        if not np.isfinite(cond) or cond > 1e12:
            raise InfeasibleParams(f"leading block before row {k + 1} is numerically singular")
        sol = np.linalg.solve(qk, np.column_stack([rk, vk]))
        a, b = sol[:, 0], sol[:, 1]
        c = 1.0 - float(up[k, k + 1 :] @ up[k, k + 1 :])
        alpha = 1.0 + float(a @ a)
        beta = 2.0 * float(a @ b)
        gamma = float(b @ b) - c
        disc = beta * beta - 4.0 * alpha * gamma
        if disc <= 0.0:
            raise InfeasibleParams(f"row {k + 1} quadratic has no real root")
        skk = (-beta + np.sqrt(disc)) / (2.0 * alpha)
        q[k, :k] = -skk * a - b
        q[k, k] = skk
    return PriorRotation(params, q)


def jacobian_Q(params: PriorParams, step: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of vec(Q) with respect to r.

    Rows follow the pair ordering of pair_indices; columns stack Q
    column-major. Requires r at distance >= step from the feasible boundary
    so that both perturbed points stay feasible.
    """
    d = params.d
    bound = feasible_radius(d)
    worst = float(np.abs(params.r).max()) if params.r.size else 0.0
    if worst > bound - step:
        raise InfeasibleParams(
            f"need max |r_ab| <= {bound - step:.6e} (radius minus step) for finite differences"
        )
    m = num_pairs(d)
    rows = np.empty((m, d * d))
    for l in range(m):
        shift = np.zeros(m)
        shift[l] = step
        qp = construct_Q(PriorParams(d, params.r + shift)).matrix
        qm = construct_Q(PriorParams(d, params.r - shift)).matrix
        rows[l] = (qp - qm).flatten(order="F") / (2.0 * step)
    return rows


def derivative_bound(params: PriorParams, step: float = FD_STEP) -> float:
    """max over (a,b) and rows u of sqrt(sum_{v<=u} |ds_uv/dr_ab|^2).

    The construction guarantees this stays below 5 everywhere in the
    feasible box.
    """
    d = params.d
    g = jacobian_Q(params, step)
    lower = np.tril(np.ones((d, d), dtype=bool))
    worst = 0.0
    for row in g:
        dq = row.reshape(d, d, order="F")
        norms = np.sqrt(((dq * lower) ** 2).sum(axis=1))
        worst = max(worst, float(norms.max()))
    return worst


def prior_density(t, d: int):
    """Unnormalized smooth bump exp(-1 / (1 - 64 d^5 t^2)) on the feasible box.

    Zero outside |t| < 1/(8 d^{5/2}); all derivatives vanish at the boundary.
    """
    t = np.asarray(t, dtype=float)
    x = 64.0 * float(d) ** 5 * t * t
    out = np.zeros_like(t)
    inside = x < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - x[inside]))
    if out.ndim == 0:
        return float(out)
    return out


@lru_cache(maxsize=None)
def prior_mass(d: int) -> float:
    """Integral of the unnormalized density over its support (adaptive
    quadrature, relative tolerance well below 1e-8)."""
    bound = feasible_radius(d)
    value, _ = quad(lambda t: prior_density(t, d), -bound, bound, epsabs=0.0, epsrel=1e-12)
    return float(value)


def expected_acceptance_rate(d: int) -> float:
    """Acceptance probability of the rejection sampler: mass / (envelope area)."""
    bound = feasible_radius(d)
    return prior_mass(d) / (2.0 * bound * np.exp(-1.0))


def _rejection_sample(rng: np.random.Generator, d: int, size: int):
    """Draw `size` iid values from the prior; returns (values, proposals_used)."""
    bound = feasible_radius(d)
    envelope = np.exp(-1.0)
    out = np.empty(size)
    filled = 0
    proposals = 0
    while filled < size:
        batch = max(4 * (size - filled), 64)
        t = rng.uniform(-bound, bound, batch)
        accept = rng.random(batch) * envelope <= prior_density(t, d)
        hits = t[accept]
        take = min(hits.size, size - filled)
        out[filled : filled + take] = hits[:take]
        # Count only proposals actually consumed so the acceptance-rate
        # statistic is unbiased.
        if take == hits.size:
            proposals += batch
        else:
            used = np.nonzero(accept)[0][take - 1] + 1
            proposals += int(used)
        filled += take
    return out, proposals


def sample_prior(d: int, seed: int) -> PriorParams:
    """One iid draw of all d(d-1)/2 free entries from the prior.

    Rejection sampling with a uniform proposal on the support and the flat
    envelope exp(-1), deterministic per seed.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    values, _ = _rejection_sample(rng, d, num_pairs(d))
    return PriorParams(d, values)


@dataclass(frozen=True)
class InformationBundle:
    """All van Trees matrices for one draw (r, r'), plus the trace of the
    information form J = F (B1 + B2)^{-1} F^T."""

    n: int
    p: float
    sigma: float
    d: int
    g1: np.ndarray
    g2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    f: np.ndarray
    trace_j: float


def information_bundle(
    n: int, p: float, sigma: float, r: PriorParams, rprime: PriorParams
) -> InformationBundle:
    """Assemble B1, B2, F for the two-node marginal and verify the exact
    identity Tr(F B2^{-1} F^T) = sigma^2 d(d-1) / ((n-2) p).

    The identity holds for any full-rank Jacobians, so its failure indicates
    an ordering or assembly bug rather than finite-difference error.
    """
    if not isinstance(n, (int, np.integer)) or n < 3:
        raise ValueError(f"n must be an integer >= 3 (got {n!r})")
    if not (0.0 < float(p) <= 1.0):
        raise ValueError(f"p must lie in (0, 1] (got {p!r})")
    if not (float(sigma) > 0.0 and np.isfinite(sigma)):
        raise ValueError(f"sigma must be finite and > 0 (got {sigma!r})")
    if r.d != rprime.d:
        raise ValueError("r and rprime must share the same dimension")
    d = r.d
    z1 = construct_Q(r).matrix
    z2 = construct_Q(rprime).matrix
    g1 = jacobian_Q(r)
    g2 = jacobian_Q(rprime)
    noise = float(sigma) ** 2
    b1 = (p / noise) * np.block([[g1 @ g1.T, g1 @ g2.T], [g2 @ g1.T, g2 @ g2.T]])
    b2 = ((n - 2) * p / noise) * block_diag(g1 @ g1.T, g2 @ g2.T)
    eye = np.eye(d)
    f = np.hstack([np.kron(z2, eye) @ g1.T, np.kron(eye, z1) @ g2.T])
    check = float(np.trace(f @ np.linalg.solve(b2, f.T)))
    expected = noise * d * (d - 1) / ((n - 2) * p)
    if abs(check - expected) > IDENTITY_RTOL * expected:
        raise IdentityViolation(
            f"Tr(F B2^-1 F^T) = {check!r}, expected {expected!r} "
            f"(relative error {abs(check - expected) / expected:.3e})"
        )
    trace_j = float(np.trace(f @ np.linalg.solve(b1 + b2, f.T)))
    return InformationBundle(int(n), float(p), float(sigma), d, g1, g2, b1, b2, f, trace_j)


@dataclass(frozen=True)
class VanTreesEstimate:
    """Monte Carlo average of Tr(J) over iid prior draws (r, r')."""

    mean: float
    stderr: float
    samples: int
    theory: float


def vantrees_estimate(
    n: int, p: float, sigma: float, d: int, samples: int, seed: int
) -> VanTreesEstimate:
    """Average trace_j over `samples` independent prior draws of (r, r').

    Draw k uses the sub-seed (seed, k), so estimates are reproducible and
    independent of evaluation order. theory is the exact-identity value
    sigma^2 d(d-1) / ((n-2) p), an upper reference for the mean.
    """
    if not isinstance(samples, (int, np.integer)) or samples < 1:
        raise ValueError(f"samples must be an integer >= 1 (got {samples!r})")
    m = num_pairs(d)
    values = np.empty(samples)
    for k in range(samples):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        draws, _ = _rejection_sample(rng, d, 2 * m)
        r = PriorParams(d, draws[:m])
        rprime = PriorParams(d, draws[m:])
        values[k] = information_bundle(n, p, sigma, r, rprime).trace_j
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    theory = float(sigma) ** 2 * d * (d - 1) / ((n - 2) * p)
    return VanTreesEstimate(mean, stderr, int(samples), theory)
