"""
Shared-only linear algebra primitives: dense solve and shared matrix product
"""
import logging
from typing import List, Optional, Tuple

import numpy as np

from fedtensor.configs.config import Config
from fedtensor.extensions.base_extension import SHARED_ONLY, ExtPrimitive, require_sh
from fedtensor.modules.errors import ShapeError, SingularSystemError
from fedtensor.modules.lang_ast import Sh, TensorType

logger = logging.getLogger(__name__)


def lu_factor(a: np.ndarray, tol: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    LU factorization with partial (row) pivoting.

    Returns the packed LU matrix (unit lower factor below the diagonal) and
    the row permutation. A pivot smaller than tol times the largest initial
    magnitude in its column is treated as singular.
    """
    tol = Config.SOLVE_PIVOT_TOL if tol is None else tol
    lu = np.array(a, dtype=np.float64, copy=True)
    if lu.ndim != 2 or lu.shape[0] != lu.shape[1]:
        raise ShapeError(f"Expected a square matrix, got shape {lu.shape}")
    n = lu.shape[0]
    if not np.all(np.isfinite(lu)):
        raise SingularSystemError("Matrix has non-finite entries")
    piv = np.arange(n)
    column_scale = np.max(np.abs(lu), axis=0) if n else np.zeros(0)

    for k in range(n):
        p = int(np.argmax(np.abs(lu[k:, k]))) + k
        if not abs(lu[p, k]) > tol * column_scale[k]:
            raise SingularSystemError(f"Matrix is singular to working precision at column {k + 1}")
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            piv[[k, p]] = piv[[p, k]]
        # Elimination
        lu[k + 1:, k] /= lu[k, k]
        lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return lu, piv


def lu_solve(lu: np.ndarray, piv: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = np.array(b, dtype=np.float64, copy=True)[piv]
    n = lu.shape[0]
    # Forward substitution (unit lower)
    for i in range(n):
        y[i] -= np.dot(lu[i, :i], y[:i])
    # Back substitution
    for i in range(n - 1, -1, -1):
        y[i] = (y[i] - np.dot(lu[i, i + 1:], y[i + 1:])) / lu[i, i]
    return y


def solve(a: np.ndarray, b: np.ndarray, tol: Optional[float] = None) -> np.ndarray:
    """x with a x = b"""
    lu, piv = lu_factor(a, tol)
    b = np.asarray(b)
    if b.ndim not in (1, 2) or b.shape[0] != lu.shape[0]:
        raise ShapeError(f"Right-hand side of shape {b.shape} does not match a {lu.shape} system")
    return lu_solve(lu, piv, b)


class SolvePrimitive(ExtPrimitive):
    """Sh((p,p)) x Sh((p,)) -> Sh((p,)); Sh((p,p)) x Sh((p,k)) -> Sh((p,k))"""

    name = "solve"
    kind = SHARED_ONLY
    arity = 2

    def infer_type(self, arg_types: Tuple[TensorType, ...]) -> TensorType:
        a = require_sh(arg_types[0], 2, "solve matrix")
        b = arg_types[1]
        p = a.shape[0]
        if a.shape != (p, p) or not isinstance(b, Sh) or b.rank not in (1, 2) or b.shape[0] != p:
            raise ValueError(f"solve needs Sh(({p},{p})) and Sh(({p},)) or Sh(({p},k)), got {a} and {b}")
        return b

    def ordinary(self, arrays, arg_types):
        return solve(arrays[0], arrays[1])

    def probe_types(self) -> List[Tuple[TensorType, ...]]:
        return [(Sh((1, 1)), Sh((1,))), (Sh((3, 3)), Sh((3,))), (Sh((2, 2)), Sh((2, 3)))]

    def sample_arguments(self, rng, shapes):
        # Diagonally dominant, hence nonsingular
        a = rng.uniform(-1.0, 1.0, size=shapes[0]) + shapes[0][0] * np.eye(shapes[0][0])
        return [a, rng.uniform(-1.0, 1.0, size=shapes[1])]


class SharedMatMulPrimitive(ExtPrimitive):
    """Sh((a,b)) x Sh((b,c)) -> Sh((a,c)); Sh((a,b)) x Sh((b,)) -> Sh((a,))"""

    name = "shared-matmul"
    kind = SHARED_ONLY
    arity = 2

    def infer_type(self, arg_types: Tuple[TensorType, ...]) -> TensorType:
        left = require_sh(arg_types[0], 2, "shared-matmul left operand")
        right = arg_types[1]
        if not isinstance(right, Sh) or right.rank not in (1, 2):
            raise ValueError(f"shared-matmul right operand must be Sh of rank 1 or 2, got {right}")
        if left.shape[1] != right.shape[0]:
            raise ValueError(f"contracted extents differ: {left} vs {right}")
        return Sh((left.shape[0],) + right.shape[1:])

    def ordinary(self, arrays, arg_types):
        return np.matmul(arrays[0], arrays[1])

    def probe_types(self):
        return [(Sh((2, 3)), Sh((3, 4))), (Sh((2, 2)), Sh((2,)))]
