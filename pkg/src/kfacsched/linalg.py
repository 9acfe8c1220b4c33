"""Dense symmetric linear algebra for K-FAC preconditioning at desk scale.

The curvature blocks of a fully-connected layer are two symmetric factors:
one built from the layer inputs, one from the gradients w.r.t. the layer's
pre-activation outputs.  Both are inverted after Tikhonov damping and applied
to the weight gradient from the left and right.  Everything here is float64
and pure: values are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack, solve_triangular

__all__ = [
    "NotPositiveDefiniteError",
    "SymMatrix",
    "compute_factor_A",
    "compute_factor_G",
    "damped_inverse",
    "precondition",
    "kron",
    "pack_upper",
    "unpack_upper",
]

# Guard for the Kronecker-product helper, which is only meant as a test
# oracle on small blocks; a full (n*m)x(n*m) product is never materialized
# in the actual preconditioning path.
KRON_DIM_CAP = 4096

_SYMMETRY_ATOL = 1e-12


class NotPositiveDefiniteError(ValueError):
    """Cholesky factorization hit a nonpositive pivot.

    ``pivot`` is the 0-based index of the leading minor that failed, as
    reported by LAPACK.
    """

    def __init__(self, pivot: int):
        super().__init__(f"matrix is not positive definite (failing pivot index {pivot})")
        self.pivot = pivot


@dataclass(frozen=True)
class SymMatrix:
    """A d x d symmetric matrix with packed upper-triangle serialization.

    Construction symmetrizes exactly (averaging with the transpose) and
    rejects inputs whose asymmetry exceeds a small absolute tolerance, so
    ``values[i, j] == values[j, i]`` holds bit-for-bit afterwards.
    """

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("dimension must be >= 1")
        scale = max(1.0, float(np.max(np.abs(arr))))
        asym = float(np.max(np.abs(arr - arr.T)))
        if asym > _SYMMETRY_ATOL * scale:
            raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
        arr = (arr + arr.T) / 2.0
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def packed_size(self) -> int:
        d = self.dim
        return d * (d + 1) // 2

    def __array__(self, dtype=None):
        return np.asarray(self.values, dtype=dtype)

    def pack(self) -> np.ndarray:
        return pack_upper(self)

    def to_bytes(self) -> bytes:
        """Serialize as little-endian float64: the dimension, then the packed
        row-major upper triangle."""
        flat = np.concatenate(([float(self.dim)], pack_upper(self)))
        return flat.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "SymMatrix":
        flat = np.frombuffer(buf, dtype="<f8")
        if flat.size < 1:
            raise ValueError("empty buffer")
        d = flat[0]
        if d < 1 or d != int(d):
            raise ValueError(f"invalid dimension prefix {d!r}")
        return unpack_upper(flat[1:], int(d))


def _factor_from_batch(batch, what: str) -> SymMatrix:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{what}: expected a batch of equal-length vectors, got shape {x.shape}")
    b = x.shape[0]
    if b < 1:
        raise ValueError(f"{what}: empty batch")
    return SymMatrix((x.T @ x) / b)


def compute_factor_A(activations) -> SymMatrix:
    """Input-side factor: the batch average of outer products a a^T.

    ``activations`` is a batch of b row vectors of length d_in.  The result
    is symmetric positive semidefinite.
    """
    return _factor_from_batch(activations, "compute_factor_A")


def compute_factor_G(output_grads) -> SymMatrix:
    """Output-side factor: the batch average of outer products g g^T."""
    return _factor_from_batch(output_grads, "compute_factor_G")


def damped_inverse(m: SymMatrix, gamma: float) -> SymMatrix:
    """Invert ``m + gamma*I`` via Cholesky factorization.

    Lower-triangular factorization, then forward/back substitution against
    the identity, then explicit symmetrization to cancel rounding asymmetry.
    Raises NotPositiveDefiniteError (with the failing pivot index) when the
    damped matrix is not positive definite.
    """
    if gamma < 0:
        raise ValueError(f"damping must be nonnegative, got {gamma}")
    a = m.values + gamma * np.eye(m.dim)
    c, info = lapack.dpotrf(a, lower=1)
    if info > 0:
        raise NotPositiveDefiniteError(pivot=info - 1)
    if info < 0:
        raise ValueError(f"illegal value in Cholesky argument {-info}")
    eye = np.eye(m.dim)
    y = solve_triangular(c, eye, lower=True)
    inv = solve_triangular(c.T, y, lower=False)
    return SymMatrix((inv + inv.T) / 2.0)


def precondition(grad, a_inv: SymMatrix, g_inv: SymMatrix) -> np.ndarray:
    """Apply the factored inverse curvature to a d_out x d_in gradient.

    Computes ``g_inv @ grad @ a_inv``, which equals un-vectorizing
    ``(a_inv kron g_inv) vec(grad)`` under column-major vec.
    """
    g = np.asarray(grad, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"gradient must be 2-D, got shape {g.shape}")
    d_out, d_in = g.shape
    if a_inv.dim != d_in or g_inv.dim != d_out:
        raise ValueError(
            f"shape mismatch: grad {d_out}x{d_in} needs A-side dim {d_in} "
            f"(got {a_inv.dim}) and G-side dim {d_out} (got {g_inv.dim})"
        )
    return g_inv.values @ g @ a_inv.values


def kron(x: SymMatrix, y: SymMatrix, max_dim: int = KRON_DIM_CAP) -> SymMatrix:
    """Kronecker product of two symmetric matrices (test oracle only).

    Refuses to build products larger than ``max_dim`` on a side.
    """
    n, m = x.dim, y.dim
    if n * m > max_dim:
        raise ValueError(f"kron result dim {n * m} exceeds cap {max_dim}")
    return SymMatrix(np.kron(x.values, y.values))


def pack_upper(m: SymMatrix) -> np.ndarray:
    """Row-major upper triangle, diagonal included: d(d+1)/2 entries."""
    i, j = np.triu_indices(m.dim)
    return np.ascontiguousarray(m.values[i, j])


def unpack_upper(arr, d: int) -> SymMatrix:
    """Rebuild a symmetric matrix from its packed upper triangle."""
    flat = np.asarray(arr, dtype=np.float64)
    if d < 1:
        raise ValueError("dimension must be >= 1")
    expected = d * (d + 1) // 2
    if flat.ndim != 1 or flat.size != expected:
        raise ValueError(f"packed length {flat.size} does not match dim {d} (expected {expected})")
    out = np.zeros((d, d))
    i, j = np.triu_indices(d)
    out[i, j] = flat
    out[j, i] = flat
    return SymMatrix(out)
