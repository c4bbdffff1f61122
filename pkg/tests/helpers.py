"""Shared fixtures-in-spirit: synthetic instances and independent reference solvers.

The reference implementations here deliberately avoid the library's solver
code paths so they can serve as oracles: a full proximal-gradient minimizer
for the solver's composite objective, and a bracketing root-finder for the
scalar fixed-point equation behind the closed-form shrinkage.
"""

import numpy as np
from scipy.optimize import brentq

from funsel.function_space import uniform_grid
from funsel.kernels import EigenBasis
from funsel.dataset import ScoreTensor


def synthetic_basis(seed: int, m: int, grid_size: int = 12, theta=None) -> EigenBasis:
    """An EigenBasis with prescribed eigenvalues and random orthonormal functions."""
    rng = np.random.default_rng(seed)
    grid = uniform_grid(grid_size)
    w = grid.weights
    raw = rng.normal(size=(grid_size, m))
    q, _ = np.linalg.qr(np.sqrt(w)[:, None] * raw)
    functions = (q / np.sqrt(w)[:, None]).T
    for l in range(m):
        lead = np.argmax(np.abs(functions[l]) > 1e-12)
        if functions[l, lead] < 0:
            functions[l] = -functions[l]
    if theta is None:
        theta = np.sort(rng.uniform(0.05, 1.0, m))[::-1]
        theta = theta / theta.sum()
    theta = np.asarray(theta, dtype=float)
    return EigenBasis(grid=grid, eigenvalues=theta, functions=functions, total_trace=float(theta.sum()))


def standardized_instance(seed: int, n: int, p: int, m: int):
    """Random scores standardized the way the pipeline would produce them."""
    rng = np.random.default_rng(seed)
    basis = synthetic_basis(seed + 1000, m)
    S = rng.normal(size=(n, p, m)) * rng.uniform(0.3, 1.5, size=(1, p, m))
    S = S - S.mean(axis=0, keepdims=True)
    scale = np.sqrt((S**2).sum(axis=2).mean(axis=0))
    S = S / scale[None, :, None]
    y = rng.normal(size=n)
    y = y - y.mean()
    return ScoreTensor(scores=S, basis=basis), y, basis


def prox_grad_reference(scores, y, theta, lam, weights, tol=1e-12, max_iter=500_000):
    """Proximal-gradient minimizer of the solver's composite objective.

    Works in whitened coordinates bt_l = b_l / sqrt(theta_l), where the penalty
    is the plain Euclidean group norm, and minimizes
        (1/2n)||y - St bt||^2 + 0.5 * sum_j bt_j'(I - St_j'St_j/n) bt_j
        + lam * sum_j w_j ||bt_j||.
    Returns coefficient rows in the original coordinates.
    """
    S = np.asarray(scores, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p, m = S.shape
    sqrt_theta = np.sqrt(theta)
    St = S * sqrt_theta[None, None, :]
    flat = St.reshape(n, p * m)
    gram = flat.T @ flat / n
    block_grams = [St[:, j, :].T @ St[:, j, :] / n for j in range(p)]
    lip = (
        float(np.linalg.eigvalsh(gram).max())
        + 1.0
        + max(float(np.linalg.eigvalsh(g).max()) for g in block_grams)
    )
    bt = np.zeros(p * m)
    for _ in range(max_iter):
        resid = y - flat @ bt
        grad = -flat.T @ resid / n + bt
        for j in range(p):
            grad[j * m : (j + 1) * m] -= block_grams[j] @ bt[j * m : (j + 1) * m]
        z = bt - grad / lip
        new = np.zeros_like(bt)
        for j in range(p):
            zj = z[j * m : (j + 1) * m]
            norm = float(np.linalg.norm(zj))
            threshold = lam * weights[j] / lip
            if np.isfinite(threshold) and norm > threshold:
                new[j * m : (j + 1) * m] = (1 - threshold / norm) * zj
        if np.linalg.norm(new - bt) <= tol * (1.0 + np.linalg.norm(bt)):
            bt = new
            break
        bt = new
    return bt.reshape(p, m) * sqrt_theta[None, :]


def fixed_point_norm_root(nu: float, lam_weight: float) -> float:
    """Solve nu * x / (x + lam_weight) = x for the positive root by bracketing."""
    if nu <= lam_weight:
        return 0.0

    def g(x):
        return nu * x / (x + lam_weight) - x

    lo = 1e-14 * max(nu, 1.0)
    return brentq(g, lo, nu, xtol=1e-14, rtol=8.9e-16)
