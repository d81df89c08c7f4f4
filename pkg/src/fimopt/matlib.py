"""Dense small-matrix kernels.

Everything here operates on plain float64 numpy arrays.  The column-stacking
convention is used throughout: ``vec`` stacks columns top to bottom, and the
diagonal-lifting operators follow the same ordering.  Routines are O(m^3)
dense and meant for desk-scale certification work, not production training.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConvergenceWarning,
    DimensionError,
    NumericError,
    PreconditionError,
)

# Relative tolerance for "is this symmetric / orthonormal" preconditions.
SYM_RTOL = 1e-8
ORTHO_RTOL = 1e-8

# Tolerance used when deciding the first nonzero component of an eigenvector.
_SIGN_RTOL = 1e-9


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return ``a`` as a 2-D float64 array with finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got ndim={m.ndim}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} contains non-finite entries")
    return m


def vec(m) -> np.ndarray:
    """Stack the columns of ``m`` into a single vector."""
    m = as_matrix(m)
    return m.reshape(-1, order="F").copy()


def devec(v, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec` for a ``rows x cols`` matrix."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if rows < 1 or cols < 1:
        raise DimensionError("devec target must have positive dimensions")
    if v.size != rows * cols:
        raise DimensionError(
            f"devec length mismatch: got {v.size}, expected {rows * cols}"
        )
    return v.reshape(rows, cols, order="F").copy()


def diag_of(m) -> np.ndarray:
    """Extract the main diagonal of a square matrix."""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise DimensionError("diag_of expects a square matrix")
    return np.diag(m).copy()


def diagv(v) -> np.ndarray:
    """Lift a vector onto the diagonal of a square matrix."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise NumericError("diagv input contains non-finite entries")
    return np.diag(v)


def diagb(blocks) -> np.ndarray:
    """Assemble square blocks into one block-diagonal matrix."""
    mats = [as_matrix(b, f"block {i}") for i, b in enumerate(blocks)]
    if not mats:
        raise DimensionError("diagb needs at least one block")
    for i, b in enumerate(mats):
        if b.shape[0] != b.shape[1]:
            raise DimensionError(f"diagb block {i} is not square: {b.shape}")
    total = sum(b.shape[0] for b in mats)
    out = np.zeros((total, total))
    at = 0
    for b in mats:
        k = b.shape[0]
        out[at : at + k, at : at + k] = b
        at += k
    return out


def diagm(m) -> np.ndarray:
    """Spread the entries of ``m`` along a diagonal, columns first.

    ``diagm([[a, c], [b, d]])`` gives ``diag(a, b, c, d)``: the same ordering
    as :func:`vec`.
    """
    return diagv(vec(m))


def kron_apply(a, b, c) -> np.ndarray:
    """Apply the Kronecker product ``A (x) B`` to ``vec(C)`` without forming it.

    Returns ``devec((A (x) B) vec(C))`` computed as ``B @ C @ A.T``.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    c = as_matrix(c, "c")
    if a.shape[0] != a.shape[1] or b.shape[0] != b.shape[1]:
        raise DimensionError("kron_apply factors must be square")
    if c.shape != (b.shape[0], a.shape[0]):
        raise DimensionError(
            f"kron_apply operand shape {c.shape} does not match factors "
            f"({b.shape[0]}, {a.shape[0]})"
        )
    return b @ c @ a.T


@dataclass(frozen=True)
class SymEigen:
    """Eigenpairs of a symmetric matrix, eigenvalues in descending order."""

    vectors: np.ndarray  # (m, k), orthonormal columns
    values: np.ndarray  # (k,), descending

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.values.ndim != 1:
            raise DimensionError("SymEigen expects 2-D vectors and 1-D values")
        if self.vectors.shape[1] != self.values.shape[0]:
            raise DimensionError("SymEigen vector/value count mismatch")


def _require_symmetric(m, name: str) -> np.ndarray:
    m = as_matrix(m, name)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square")
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > SYM_RTOL * scale:
        raise PreconditionError(f"{name} is not symmetric within {SYM_RTOL:g}")
    return 0.5 * (m + m.T)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip column signs so the first nonzero component is positive."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        cutoff = _SIGN_RTOL * max(np.abs(col).max(), 1e-300)
        nonzero = np.nonzero(np.abs(col) > cutoff)[0]
        if nonzero.size and col[nonzero[0]] < 0:
            out[:, j] = -col
    return out


def sym_eig(m, k: int | None = None) -> SymEigen:
    """Eigendecompose a symmetric matrix.

    Eigenvalues are returned in descending order (stable under ties) and each
    eigenvector is oriented so its first nonzero component is positive.  When
    ``k`` is given only the top ``k`` pairs are kept.
    """
    sym = _require_symmetric(m, "sym_eig input")
    dim = sym.shape[0]
    if k is not None and not 1 <= k <= dim:
        raise DimensionError(f"k={k} out of range for dimension {dim}")
    values, vectors = np.linalg.eigh(sym)
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = _fix_signs(vectors[:, order])
    if k is not None:
        values = values[:k]
        vectors = vectors[:, :k]
    return SymEigen(vectors=vectors, values=values)


def sym_power(m, power: float, rcond: float = 1e-12) -> np.ndarray:
    """Matrix power of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues at or below ``rcond`` times the largest are treated as zero,
    which gives pseudo-inverse semantics for negative powers.
    """
    eig = sym_eig(m)
    lam = np.maximum(eig.values, 0.0)
    cut = rcond * (lam[0] if lam.size and lam[0] > 0 else 1.0)
    powered = np.zeros_like(lam)
    keep = lam > cut
    powered[keep] = lam[keep] ** power
    out = (eig.vectors * powered) @ eig.vectors.T
    return 0.5 * (out + out.T)


def qr_complement(u) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of ``span(U)``.

    ``U`` must be m x r with orthonormal columns and r < m; the result is
    m x (m - r) with ``U_c.T @ U == 0``.
    """
    u = as_matrix(u, "u")
    m, r = u.shape
    if r >= m:
        raise DimensionError(f"complement of a rank-{r} basis in dim {m} is empty")
    gram = u.T @ u
    if np.abs(gram - np.eye(r)).max() > ORTHO_RTOL:
        raise PreconditionError("columns are not orthonormal within tolerance")
    full, _ = np.linalg.qr(u, mode="complete")
    comp = full[:, r:]
    # Defensive: Householder QR guarantees this, cheap to confirm at desk scale.
    if np.abs(comp.T @ u).max() > 1e-10:
        raise NumericError("complement failed the orthogonality check")
    return comp


def _spd_check(m, name: str) -> tuple[np.ndarray, np.ndarray]:
    sym = _require_symmetric(m, name)
    lam = np.linalg.eigvalsh(sym)
    scale = max(1.0, float(lam[-1]))
    if lam[0] < -1e-10 * scale:
        raise NumericError(f"{name} has a negative eigenvalue ({lam[0]:.3e})")
    return sym, lam


def _newton_schulz(a, steps: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Coupled Newton-Schulz iteration; returns (Y_T, Z_T, ||A||_F)."""
    sym, lam = _spd_check(a, "newton_schulz input")
    if steps < 1:
        raise DimensionError("newton_schulz needs at least one step")
    fro = float(np.linalg.norm(sym, "fro"))
    if fro == 0.0:
        raise NumericError("newton_schulz input is the zero matrix")
    # Convergence needs ||I - A/||A||_F||_2 < 1; flag starts outside that ball.
    if np.abs(1.0 - lam / fro).max() >= 1.0:
        warnings.warn(
            "newton_schulz started outside its convergence region",
            ConvergenceWarning,
            stacklevel=3,
        )
    dim = sym.shape[0]
    eye = np.eye(dim)
    y = sym / fro
    z = eye.copy()
    for _ in range(steps):
        t = 0.5 * (3.0 * eye - z @ y)
        y = y @ t
        z = t @ z
    return y, z, fro


def newton_schulz_inv_sqrt(a, steps: int = 5) -> np.ndarray:
    """Approximate ``A^(-1/2)`` for SPD ``A`` by Newton-Schulz iteration."""
    _, z, fro = _newton_schulz(a, steps)
    return z / np.sqrt(fro)


def newton_schulz_sqrt(a, steps: int = 5) -> np.ndarray:
    """Approximate ``A^(1/2)`` for SPD ``A``; the other branch of the coupling."""
    y, _, fro = _newton_schulz(a, steps)
    return y * np.sqrt(fro)


_FALLBACK_SEED = 0x5EED


def subspace_iteration(a, init, steps: int = 1) -> SymEigen:
    """Block power iteration for the top eigenpairs of a symmetric PSD matrix.

    Runs ``steps`` rounds of multiply-then-QR starting from ``init`` (m x r),
    then diagonalizes the Rayleigh quotient and rotates the basis, so the
    returned vectors are ordered by descending Rayleigh value.  A rank-deficient
    ``init`` falls back to a fresh Gaussian orthonormal start (fixed internal
    seed, so the fallback is deterministic).
    """
    sym = _require_symmetric(a, "subspace_iteration operand")
    init = as_matrix(init, "init")
    if steps < 1:
        raise DimensionError("subspace_iteration needs steps >= 1")
    m = sym.shape[0]
    r = init.shape[1]
    if init.shape[0] != m or r > m:
        raise DimensionError(
            f"init shape {init.shape} incompatible with operand dim {m}"
        )
    if np.linalg.matrix_rank(init) < r:
        rng = np.random.default_rng(_FALLBACK_SEED)
        init, _ = np.linalg.qr(rng.standard_normal((m, r)))
    u = init
    for _ in range(steps):
        u, _ = np.linalg.qr(sym @ u)
    rayleigh = u.T @ sym @ u
    inner = sym_eig(rayleigh)
    vectors = _fix_signs(u @ inner.vectors)
    return SymEigen(vectors=vectors, values=inner.values)
