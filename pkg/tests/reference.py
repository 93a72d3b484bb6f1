"""Independent oracles and frozen reference values for the test suite.

Everything here is deliberately naive: literal sums, exhaustive grids, and
plain quadrature, so that a bug in the library's closed forms or vectorized
paths cannot hide in a shared implementation.
"""

import numpy as np

# Quadrature values for the smooth bump prior exp(-1 / (1 - (t/bound)^2)),
# frozen from 4000-node Gauss-Legendre quadrature over the support.
# The acceptance probability mass / (2 bound e^{-1}) is scale-free, hence
# identical for every d.
PRIOR_MASS_D2 = 0.009810969944291493
PRIOR_MASS_D3 = 0.003560277073377194
PRIOR_MEAN_ABS_D2 = 0.0073904599964118465
PRIOR_SD_ABS_D2 = 0.004752370460977241
PRIOR_ACCEPT_RATE = 0.6034501612189381


def rotation2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def reflection2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, s], [s, -c]])


def closed_form_q2(t: float) -> np.ndarray:
    """The d=2 rotation with free upper entry t, solved by hand."""
    root = np.sqrt(1.0 - t * t)
    return np.array([[root, t], [-t, root]])


def literal_loss(z: np.ndarray, zstar: np.ndarray, b: np.ndarray) -> float:
    """(1/n) sum_i ||Z_i - Z_i* B||^2 evaluated term by term."""
    total = 0.0
    for zi, zsi in zip(z, zstar):
        diff = zi - zsi @ b
        total += float((diff * diff).sum())
    return total / len(z)


def double_sum_pairwise(z: np.ndarray, zstar: np.ndarray) -> float:
    """(1/n^2) sum_i sum_j ||Z_i Z_j^T - Z_i* Z_j*^T||^2, all n^2 terms."""
    n = len(z)
    total = 0.0
    for i in range(n):
        for j in range(n):
            diff = z[i] @ z[j].T - zstar[i] @ zstar[j].T
            total += float((diff * diff).sum())
    return total / n**2


def group_grid_2d(gridsize: int, rotations_only: bool) -> np.ndarray:
    """All grid elements of SO(2) (or O(2) with the reflection sheet)."""
    theta = np.linspace(0.0, 2.0 * np.pi, gridsize, endpoint=False)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.stack([np.stack([c, -s], axis=1), np.stack([s, c], axis=1)], axis=1)
    if rotations_only:
        return rot
    ref = np.stack([np.stack([c, s], axis=1), np.stack([s, -c], axis=1)], axis=1)
    return np.concatenate([rot, ref])


def grid_nearest_2d(x: np.ndarray, rotations_only: bool, gridsize: int = 400_000):
    """Brute-force nearest group element to x in Frobenius norm."""
    grid = group_grid_2d(gridsize, rotations_only)
    dist = ((grid - x[None]) ** 2).sum(axis=(1, 2))
    best = int(np.argmin(dist))
    return grid[best], float(dist[best])


def grid_align_2d(z: np.ndarray, zstar: np.ndarray, rotations_only: bool, gridsize: int = 1_000_000):
    """Brute-force Procrustes alignment over the discretized group.

    The per-candidate objective (1/n) sum_i ||Z_i - Z_i* B||^2 expands to
    2d - 2 Tr(M B); the grid scan uses that expansion entrywise, and the
    winning candidate is re-scored with literal_loss by the caller.
    """
    m = np.zeros((2, 2))
    for zi, zsi in zip(z, zstar):
        m += zi.T @ zsi
    m /= len(z)
    theta = np.linspace(0.0, 2.0 * np.pi, gridsize, endpoint=False)
    c, s = np.cos(theta), np.sin(theta)
    # B = M-weighted trace of the rotation sheet, then the reflection sheet.
    trace_rot = (m[0, 0] + m[1, 1]) * c + (m[0, 1] - m[1, 0]) * s
    best_rot = int(np.argmax(trace_rot))
    candidates = [rotation2(theta[best_rot])]
    if not rotations_only:
        trace_ref = (m[0, 0] - m[1, 1]) * c + (m[0, 1] + m[1, 0]) * s
        best_ref = int(np.argmax(trace_ref))
        candidates.append(reflection2(theta[best_ref]))
    losses = [literal_loss(z, zstar, b) for b in candidates]
    best = int(np.argmin(losses))
    return candidates[best], losses[best]


def naive_masked_matrix(instance) -> np.ndarray:
    """Entry-by-entry assembly through the observation accessor."""
    n, d = instance.params.n, instance.params.d
    out = np.zeros((n * d, n * d))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            try:
                block = instance.observation(i, j)
            except KeyError:
                continue
            out[i * d : (i + 1) * d, j * d : (j + 1) * d] = block
    return out


def naive_jacobian(construct, d: int, r: np.ndarray, step: float) -> np.ndarray:
    """Loop-and-index central differences of vec(Q), column-major by hand."""
    m = r.size
    rows = np.zeros((m, d * d))
    for l in range(m):
        plus, minus = r.copy(), r.copy()
        plus[l] += step
        minus[l] -= step
        qp, qm = construct(d, plus), construct(d, minus)
        for v in range(d):
            for u in range(d):
                rows[l, v * d + u] = (qp[u, v] - qm[u, v]) / (2.0 * step)
    return rows


def gauss_legendre_bump(d: int, nodes: int = 4000):
    """(mass, mean |t|, E t^2) of the unnormalized bump prior by quadrature."""
    bound = 1.0 / (8.0 * float(d) ** 2.5)
    x, w = np.polynomial.legendre.leggauss(nodes)
    t = bound * x
    w = w * bound
    inside = (t / bound) ** 2
    f = np.exp(-1.0 / (1.0 - inside))
    mass = float((w * f).sum())
    mean_abs = float((w * np.abs(t) * f).sum() / mass)
    second = float((w * t * t * f).sum() / mass)
    return mass, mean_abs, second


def haar_elements(rng: np.random.Generator, n: int, d: int, rotations: bool) -> np.ndarray:
    """Reference Haar sampler, one QR at a time."""
    out = np.empty((n, d, d))
    for i in range(n):
        q, r = np.linalg.qr(rng.standard_normal((d, d)))
        q = q * np.sign(np.diag(r))
        if rotations and np.linalg.det(q) < 0:
            q[:, -1] = -q[:, -1]
        out[i] = q
    return out
