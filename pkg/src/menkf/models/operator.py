"""Assembled block-tridiagonal form of one implicit time step.

The interior rows hold the linearised discrete conservation law; the first row
is a Dirichlet inlet and the last row a two-point linear extrapolation. This
reference representation is used to check the fused sweep kernels and to
compute exact solutions of the implicit system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


@dataclass
class ModelOperator:
    """``Psi x = c`` with ``n`` block rows of size ``n_vars``.

    Attributes:
        lower, diag, upper: ``(n, n_vars, n_vars)`` blocks of interior rows; entries
            of the boundary rows are ignored.
        rhs: ``(n, n_vars)`` right-hand side of interior rows.
        inlet: ``(n_vars,)`` Dirichlet values imposed on the first node.
    """

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    rhs: np.ndarray
    inlet: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.rhs.shape[0]

    @property
    def n_vars(self) -> int:
        return self.rhs.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """``Psi x`` on interior rows, ``x`` shaped ``(n_vars, n)``."""
        xt = np.asarray(x, dtype=float).T
        out = np.zeros_like(xt)
        out[1:-1] = (
            np.einsum("ijk,ik->ij", self.lower[1:-1], xt[:-2])
            + np.einsum("ijk,ik->ij", self.diag[1:-1], xt[1:-1])
            + np.einsum("ijk,ik->ij", self.upper[1:-1], xt[2:])
        )
        return out.T

    def residual(self, x: np.ndarray) -> np.ndarray:
        """Residual ``c - Psi x`` including the boundary rows."""
        x = np.asarray(x, dtype=float)
        res = self.rhs.T - self.apply(x)
        res[:, 0] = self.inlet - x[:, 0]
        res[:, -1] = 2.0 * x[:, -2] - x[:, -3] - x[:, -1]
        return res

    def jacobi_sweep(self, start: np.ndarray) -> np.ndarray:
        """One block-Jacobi sweep from ``start``, then the boundary closures.

        The outlet is extrapolated from the freshly swept interior, so an exact
        solution of the full system is a fixed point of the sweep.
        """
        st = np.asarray(start, dtype=float).T
        off = np.einsum("ijk,ik->ij", self.lower[1:-1], st[:-2]) + np.einsum(
            "ijk,ik->ij", self.upper[1:-1], st[2:]
        )
        new = np.empty_like(st)
        new[1:-1] = np.linalg.solve(self.diag[1:-1], (self.rhs[1:-1] - off)[..., None])[..., 0]
        new[0] = self.inlet
        new[-1] = 2.0 * new[-2] - new[-3]
        return new.T

    def to_sparse(self) -> sp.csr_matrix:
        n, nv = self.n_nodes, self.n_vars
        blocks = [[None] * n for _ in range(n)]
        eye = np.eye(nv)
        blocks[0][0] = eye
        for i in range(1, n - 1):
            blocks[i][i - 1] = self.lower[i]
            blocks[i][i] = self.diag[i]
            blocks[i][i + 1] = self.upper[i]
        blocks[n - 1][n - 3] = eye
        blocks[n - 1][n - 2] = -2.0 * eye
        blocks[n - 1][n - 1] = eye
        return sp.bmat(blocks, format="csr")

    def solve(self) -> np.ndarray:
        """Exact solution of the full system (interior rows and boundary closures)."""
        b = self.rhs.copy()
        b[0] = self.inlet
        b[-1] = 0.0
        x = spla.spsolve(self.to_sparse().tocsc(), b.reshape(-1))
        return x.reshape(self.n_nodes, self.n_vars).T
