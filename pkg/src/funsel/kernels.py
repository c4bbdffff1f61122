"""Stationary kernel catalog and the eigenbasis of its integral operator.

The basis is computed by weight-symmetrized quadrature (Nystrom) on the data
grid: with Gram matrix M[g,h] = k(t_g, t_h) and D = diag(weights), the matrix
A = D^{1/2} M D^{1/2} is symmetric and shares the integral operator's spectrum
at quadrature accuracy; eigenfunctions v_l(t_g) = u_l[g] / sqrt(w_g) come out
orthonormal under the same quadrature used for l2_inner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateKernelError, InvalidGridError, NumericError
from .function_space import Grid, GridFunction

KERNEL_FAMILIES = ("gaussian", "exponential", "matern32", "matern52")

#: Relative floor below which eigenvalues are discarded; the penalty norm
#: divides by theta_l, so near-null directions would be numerically meaningless.
EIGENVALUE_FLOOR = 1e-12

_SQRT3 = np.sqrt(3.0)
_SQRT5 = np.sqrt(5.0)


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family plus its length scale rho (domain units)."""

    family: str
    rho: float

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(
                f"unknown kernel family {self.family!r}; choose from {KERNEL_FAMILIES}"
            )
        if not self.rho > 0:
            raise ValueError("kernel length scale rho must be positive")


def kernel_eval(spec: KernelSpec, t, s):
    """Evaluate k(t, s); broadcasts over array arguments."""
    d = np.abs(np.asarray(t, dtype=float) - np.asarray(s, dtype=float))
    rho = spec.rho
    if spec.family == "gaussian":
        return np.exp(-(d**2) / rho)
    if spec.family == "exponential":
        return np.exp(-d / rho)
    if spec.family == "matern32":
        q = _SQRT3 * d / rho
        return (1.0 + q) * np.exp(-q)
    q = _SQRT5 * d / rho
    return (1.0 + q + q**2 / 3.0) * np.exp(-q)


@dataclass(frozen=True)
class EigenBasis:
    """Truncated spectral decomposition (theta_l, v_l) of the kernel operator.

    `functions` holds the eigenfunctions row-wise, shape (m, grid size).
    `total_trace` is the sum of all positive eigenvalues retained at build
    time and is preserved through truncation so that trace fractions stay
    meaningful.
    """

    grid: Grid
    eigenvalues: np.ndarray
    functions: np.ndarray
    total_trace: float

    def __post_init__(self):
        vals = np.asarray(self.eigenvalues, dtype=float)
        fns = np.asarray(self.functions, dtype=float)
        vals.setflags(write=False)
        fns.setflags(write=False)
        object.__setattr__(self, "eigenvalues", vals)
        object.__setattr__(self, "functions", fns)
        if vals.ndim != 1 or vals.size < 1:
            raise InvalidGridError("basis needs at least one eigenvalue")
        if not np.all(vals > 0):
            raise DegenerateKernelError("eigenvalues must be strictly positive")
        if np.any(np.diff(vals) > 0):
            raise NumericError("eigenvalues must be nonincreasing")
        if fns.shape != (vals.size, self.grid.size):
            raise InvalidGridError("eigenfunction array has wrong shape")
        gram = (fns * self.grid.weights) @ fns.T
        if np.max(np.abs(gram - np.eye(vals.size))) > 1e-8:
            raise NumericError("eigenfunctions are not discretely orthonormal")

    @property
    def m(self) -> int:
        return self.eigenvalues.size

    def function(self, l: int) -> GridFunction:
        return GridFunction(grid=self.grid, values=self.functions[l])


def build_basis(spec: KernelSpec, grid: Grid) -> EigenBasis:
    """Eigendecompose the kernel integral operator on the grid.

    Retains eigenvalues above EIGENVALUE_FLOOR * theta_1 and fixes each
    eigenvector's sign so its first nonzero component is positive, making the
    output reproducible across runs and platforms.
    """
    t = grid.points
    M = kernel_eval(spec, t[:, None], t[None, :])
    sw = np.sqrt(grid.weights)
    A = sw[:, None] * M * sw[None, :]
    A = (A + A.T) / 2
    try:
        vals, vecs = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    vals = vals[::-1]
    vecs = vecs[:, ::-1]
    top = vals[0]
    if not top > 0:
        raise DegenerateKernelError("kernel Gram matrix has no positive eigenvalues")
    if vals[-1] < -1e-10 * top:
        raise NumericError(
            f"Gram matrix is not positive semidefinite (min eigenvalue {vals[-1]:g})"
        )
    keep = vals > EIGENVALUE_FLOOR * top
    if not keep.any():
        raise DegenerateKernelError("all eigenvalues fall below the floor")
    vals = vals[keep]
    vecs = vecs[:, keep]
    for col in range(vecs.shape[1]):
        u = vecs[:, col]
        lead = np.argmax(np.abs(u) > 1e-12 * np.max(np.abs(u)))
        if u[lead] < 0:
            vecs[:, col] = -u
    functions = (vecs / sw[:, None]).T
    return EigenBasis(
        grid=grid,
        eigenvalues=vals,
        functions=functions,
        total_trace=float(vals.sum()),
    )


def truncate_basis(basis: EigenBasis, n: int, fraction: float = 0.99) -> EigenBasis:
    """Cut the basis at min(n, smallest m whose trace share reaches `fraction`)."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    if n < 1:
        raise ValueError("sample size must be at least 1")
    cum = np.cumsum(basis.eigenvalues)
    threshold = fraction * basis.total_trace
    reached = np.nonzero(cum >= threshold - 1e-12 * basis.total_trace)[0]
    m = int(reached[0]) + 1 if reached.size else basis.m
    m = min(m, n, basis.m)
    return EigenBasis(
        grid=basis.grid,
        eigenvalues=basis.eigenvalues[:m],
        functions=basis.functions[:m],
        total_trace=basis.total_trace,
    )
