"""Structured fits to the empirical gradient second-moment matrix.

The object being approximated is ``F = E[vec(G) vec(G)^T]`` estimated from a
batch of same-shape gradient matrices.  Each structure family below admits a
closed-form least-squares fit; this module provides those fits, dense
materialization for certification, a projected-gradient oracle that minimizes
the same Frobenius objective numerically, and the efficient inverse-square-root
application used by the optimizers.

Dense routines refuse to run above desk scale (``m * n <= 64`` for anything
that materializes F, ``m <= 8`` for per-column dense blocks).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matlib
from .errors import (
    DimensionError,
    NumericError,
    PositivityError,
    PreconditionError,
    SizeGuardError,
)

# Desk-scale guards for dense materialization.
FIM_SIZE_LIMIT = 64  # max m * n
BLOCK_ROW_LIMIT = 8  # max m for per-column dense blocks

# Floor applied inside square roots of fitted diagonal quantities.
SQRT_FLOOR = 1e-30


def _rsqrt(x):
    return 1.0 / np.sqrt(np.maximum(x, SQRT_FLOOR))


@dataclass(frozen=True)
class GradientSample:
    """A batch of same-shape gradient matrices, stacked as (count, m, n)."""

    mats: np.ndarray

    def __post_init__(self):
        mats = np.asarray(self.mats, dtype=np.float64)
        if mats.ndim != 3 or mats.shape[0] < 1:
            raise DimensionError("expected a non-empty (count, m, n) stack")
        if mats.shape[1] < 1 or mats.shape[2] < 1:
            raise DimensionError("gradient matrices need positive dimensions")
        if not np.all(np.isfinite(mats)):
            raise NumericError("gradient samples contain non-finite entries")
        object.__setattr__(self, "mats", mats)

    @classmethod
    def from_matrices(cls, mats) -> "GradientSample":
        arrs = [matlib.as_matrix(g, f"sample {i}") for i, g in enumerate(mats)]
        if not arrs:
            raise DimensionError("need at least one gradient sample")
        first = arrs[0].shape
        for i, g in enumerate(arrs):
            if g.shape != first:
                raise DimensionError(
                    f"sample {i} has shape {g.shape}, expected {first}"
                )
        return cls(np.stack(arrs))

    @classmethod
    def single(cls, g) -> "GradientSample":
        return cls.from_matrices([g])

    @property
    def count(self) -> int:
        return self.mats.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.mats.shape[1], self.mats.shape[2]

    def mean_square(self) -> np.ndarray:
        """Entrywise mean of G**2, shape (m, n)."""
        return np.mean(self.mats**2, axis=0)

    def mean_outer_rows(self) -> np.ndarray:
        """Mean of ``G @ G.T``, shape (m, m)."""
        return np.einsum("kij,klj->il", self.mats, self.mats) / self.count

    def mean_outer_cols(self) -> np.ndarray:
        """Mean of ``G.T @ G``, shape (n, n)."""
        return np.einsum("kji,kjl->il", self.mats, self.mats) / self.count


@dataclass(frozen=True)
class EmpiricalFim:
    """Dense estimate of E[vec(G) vec(G)^T] for gradients of a known shape."""

    matrix: np.ndarray
    shape: tuple[int, int]

    def __post_init__(self):
        mat = matlib.as_matrix(self.matrix, "empirical second moment")
        m, n = self.shape
        object.__setattr__(self, "shape", (int(m), int(n)))
        if mat.shape != (m * n, m * n):
            raise DimensionError(
                f"matrix is {mat.shape}, expected ({m * n}, {m * n})"
            )
        scale = max(1.0, float(np.abs(mat).max()))
        if np.abs(mat - mat.T).max() > 1e-10 * scale:
            raise PreconditionError("second-moment matrix must be symmetric")
        if np.linalg.eigvalsh(0.5 * (mat + mat.T))[0] < -1e-8:
            raise NumericError("second-moment matrix is not PSD within tolerance")
        object.__setattr__(self, "matrix", 0.5 * (mat + mat.T))

    def block(self, i: int, j: int) -> np.ndarray:
        """The (i, j) column-pair block, shape (m, m)."""
        m = self.shape[0]
        return self.matrix[i * m : (i + 1) * m, j * m : (j + 1) * m]


def build_empirical_fim(samples: GradientSample) -> EmpiricalFim:
    """Average of outer products of the stacked column vectors."""
    m, n = samples.shape
    if m * n > FIM_SIZE_LIMIT:
        raise SizeGuardError(
            f"dense second moment needs m*n <= {FIM_SIZE_LIMIT}, got {m * n}"
        )
    vecs = np.stack([g.reshape(-1, order="F") for g in samples.mats])
    f = vecs.T @ vecs / samples.count
    return EmpiricalFim(matrix=0.5 * (f + f.T), shape=(m, n))


# ---------------------------------------------------------------------------
# Structure families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Diagonal:
    """Fully diagonal approximation; ``values`` has one entry per weight."""

    values: np.ndarray
    shape: tuple[int, int]

    def dense(self) -> np.ndarray:
        return matlib.diagv(self.values)


@dataclass(frozen=True)
class KroneckerSqrt:
    """Square-root Kronecker pair: dense form is sqrt(right) (x) sqrt(left)."""

    right: np.ndarray  # (n, n) SPD
    left: np.ndarray  # (m, m) SPD
    shape: tuple[int, int]

    def dense(self) -> np.ndarray:
        return np.kron(
            matlib.sym_power(self.right, 0.5), matlib.sym_power(self.left, 0.5)
        )


@dataclass(frozen=True)
class Whitening:
    """One shared row-covariance block per column: I_n (x) M."""

    row_cov: np.ndarray  # (m, m) SPD
    shape: tuple[int, int]

    def dense(self) -> np.ndarray:
        return np.kron(np.eye(self.shape[1]), self.row_cov)


@dataclass(frozen=True)
class Normalization:
    """Per-column scalar scaling: S (x) I_m with S = diag(scale)."""

    scale: np.ndarray  # (n,) positive
    shape: tuple[int, int]

    def dense(self) -> np.ndarray:
        return np.kron(matlib.diagv(self.scale), np.eye(self.shape[0]))


@dataclass(frozen=True)
class SharedEigen:
    """Shared eigenbasis with per-column diagonal scalings."""

    basis: np.ndarray  # (m, m) orthonormal
    table: np.ndarray  # (m, n) nonnegative; column i scales column i's block

    @property
    def shape(self) -> tuple[int, int]:
        return self.table.shape

    def dense(self) -> np.ndarray:
        blocks = [
            self.basis @ matlib.diagv(self.table[:, i]) @ self.basis.T
            for i in range(self.table.shape[1])
        ]
        return matlib.diagb(blocks)


@dataclass(frozen=True)
class SoapEigen:
    """Two-sided eigenbasis with a dense diagonal middle table."""

    left_basis: np.ndarray  # (m, m) orthonormal
    right_basis: np.ndarray  # (n, n) orthonormal
    table: np.ndarray  # (m, n) nonnegative

    @property
    def shape(self) -> tuple[int, int]:
        return self.table.shape

    def dense(self) -> np.ndarray:
        rot = np.kron(self.right_basis, self.left_basis)
        return rot @ matlib.diagm(self.table) @ rot.T


@dataclass(frozen=True)
class TwoSidedScaling:
    """Diagonal Kronecker pair: diag(col_scale) (x) diag(row_scale)."""

    col_scale: np.ndarray  # (n,) positive
    row_scale: np.ndarray  # (m,) positive

    @property
    def shape(self) -> tuple[int, int]:
        return self.row_scale.shape[0], self.col_scale.shape[0]

    def dense(self) -> np.ndarray:
        return np.kron(matlib.diagv(self.col_scale), matlib.diagv(self.row_scale))


@dataclass(frozen=True)
class CompensationScale:
    """Per-column scale for the complement residual of a low-rank basis.

    The dense form is ``diag(scale)^-2 (x) U_c U_c^T`` where ``U_c`` is the
    orthogonal complement of the basis the scale was fitted against; the
    complement is carried so the loss can be materialized.
    """

    scale: np.ndarray  # (n,) positive
    complement: np.ndarray  # (m, m - r) orthonormal columns
    shape: tuple[int, int]

    def dense(self) -> np.ndarray:
        proj = self.complement @ self.complement.T
        return np.kron(matlib.diagv(self.scale**-2.0), proj)


@dataclass(frozen=True)
class GeneralBlockDiag:
    """Unconstrained per-column dense blocks."""

    blocks: np.ndarray  # (n, m, m), each PSD

    @property
    def shape(self) -> tuple[int, int]:
        return self.blocks.shape[1], self.blocks.shape[0]

    def dense(self) -> np.ndarray:
        return matlib.diagb(list(self.blocks))


StructuredFactor = (
    Diagonal
    | KroneckerSqrt
    | Whitening
    | Normalization
    | SharedEigen
    | SoapEigen
    | TwoSidedScaling
    | CompensationScale
    | GeneralBlockDiag
)


# ---------------------------------------------------------------------------
# Closed-form fits
# ---------------------------------------------------------------------------


def fit_diagonal(samples: GradientSample) -> Diagonal:
    """Entrywise second moments in column-stacked order."""
    m, n = samples.shape
    values = samples.mean_square().reshape(-1, order="F").copy()
    return Diagonal(values=values, shape=(m, n))


def fit_kronecker_shampoo(samples: GradientSample) -> KroneckerSqrt:
    """Both one-sided Kronecker factors: right = mean(G^T G)/m, left = mean(G G^T)/n."""
    m, n = samples.shape
    right = samples.mean_outer_cols() / m
    left = samples.mean_outer_rows() / n
    return KroneckerSqrt(right=right, left=left, shape=(m, n))


def fit_whitening(samples: GradientSample) -> Whitening:
    """Shared row covariance: mean(G G^T)/n."""
    m, n = samples.shape
    return Whitening(row_cov=samples.mean_outer_rows() / n, shape=(m, n))


def fit_normalization(samples: GradientSample) -> Normalization:
    """Per-column mean squared norms divided by the row count."""
    m, n = samples.shape
    scale = samples.mean_square().sum(axis=0) / m
    if np.any(scale <= 0.0):
        raise PositivityError("a column is zero across every sample")
    return Normalization(scale=scale, shape=(m, n))


def fit_shared_eigen(samples: GradientSample, basis=None) -> SharedEigen:
    """Eigenbasis of mean(G G^T) plus per-column second moments in that basis.

    ``basis`` may be passed to fix the rotation (it must be m x m orthonormal),
    in which case only the diagonal table is fitted.
    """
    m, _ = samples.shape
    if basis is None:
        basis = matlib.sym_eig(samples.mean_outer_rows()).vectors
    else:
        basis = matlib.as_matrix(basis, "basis")
        if basis.shape != (m, m):
            raise DimensionError(f"basis must be ({m}, {m}), got {basis.shape}")
        if np.abs(basis.T @ basis - np.eye(m)).max() > matlib.ORTHO_RTOL:
            raise PreconditionError("basis is not orthonormal within tolerance")
    rotated = np.einsum("ji,kjl->kil", basis, samples.mats)
    table = np.mean(rotated**2, axis=0)
    return SharedEigen(basis=basis, table=table)


def fit_soap(samples: GradientSample, left_basis=None, right_basis=None) -> SoapEigen:
    """Two-sided eigenbases plus the rotated entrywise second moments."""
    m, n = samples.shape
    if left_basis is None:
        left_basis = matlib.sym_eig(samples.mean_outer_rows()).vectors
    else:
        left_basis = matlib.as_matrix(left_basis, "left basis")
        if left_basis.shape != (m, m):
            raise DimensionError("left basis has the wrong shape")
    if right_basis is None:
        right_basis = matlib.sym_eig(samples.mean_outer_cols()).vectors
    else:
        right_basis = matlib.as_matrix(right_basis, "right basis")
        if right_basis.shape != (n, n):
            raise DimensionError("right basis has the wrong shape")
    rotated = np.einsum("ji,kjl,lo->kio", left_basis, samples.mats, right_basis)
    table = np.mean(rotated**2, axis=0)
    return SoapEigen(left_basis=left_basis, right_basis=right_basis, table=table)


def scaling_fixed_point(mean_square, iters: int = 5, q_init=None, floor: float = 0.0):
    """Alternating updates for the diagonal two-sided scaling.

    ``mean_square`` is the entrywise mean of G**2.  Starting from ``q_init``
    (all ones by default) each round sets the column scale from the row scale
    and then the row scale from the column scale.  ``floor`` guards the
    denominators; the strict-positivity contract lives in
    :func:`fit_two_sided`.
    """
    p = matlib.as_matrix(mean_square, "mean square")
    m, n = p.shape
    if iters < 1:
        raise DimensionError("need at least one iteration")
    if q_init is None:
        q = np.ones(m)
    else:
        q = np.asarray(q_init, dtype=np.float64).reshape(-1)
        if q.shape[0] != m:
            raise DimensionError(f"q_init must have length {m}")
    s = np.ones(n)
    for _ in range(iters):
        s = (p.T @ q) / max(float(q @ q), floor if floor > 0 else np.finfo(float).tiny)
        q = (p @ s) / max(float(s @ s), floor if floor > 0 else np.finfo(float).tiny)
    return s, q


def fit_two_sided(samples: GradientSample, iters: int = 5, q_init=None) -> TwoSidedScaling:
    """Diagonal Kronecker fit via the alternating fixed point (5 rounds default)."""
    p = samples.mean_square()
    if np.any(p <= 0.0):
        raise PositivityError("mean squared gradient must be strictly positive")
    s, q = scaling_fixed_point(p, iters=iters, q_init=q_init)
    return TwoSidedScaling(col_scale=s, row_scale=q)


def fit_general_scaled(samples: GradientSample, iters: int, m_init=None):
    """Alternating fixed point for a diagonal column scale times a dense row block.

    Returns ``(scale, row_cov)`` with scale length n and row_cov m x m SPD.
    """
    m, n = samples.shape
    if iters < 1:
        raise DimensionError("need at least one iteration")
    mats = samples.mats
    k = samples.count
    if k >= 2:
        cross = np.zeros((n, n))
        for a in range(k):
            for b in range(k):
                if a == b:
                    continue
                cross += (mats[a].T @ mats[b]) ** 2
        cross /= k * (k - 1)
    else:
        cross = (mats[0].T @ mats[0]) ** 2
    if np.any(cross <= 0.0):
        raise PositivityError(
            "cross-sample column products must be strictly positive entrywise"
        )
    if m_init is None:
        row_cov = np.eye(m)
    else:
        row_cov = matlib.as_matrix(m_init, "m_init")
        if row_cov.shape != (m, m):
            raise DimensionError(f"m_init must be ({m}, {m})")
    for _ in range(iters):
        quad = np.einsum("kji,jl,kli->i", mats, row_cov, mats) / k
        scale = quad / float(np.sum(row_cov**2))
        weighted = np.einsum("kij,j,klj->il", mats, scale, mats) / k
        row_cov = weighted / float(scale @ scale)
    return scale, row_cov


def fit_compensation_scale(samples: GradientSample, u) -> CompensationScale:
    """Closed-form per-column scale for the energy outside ``span(u)``."""
    m, n = samples.shape
    u = matlib.as_matrix(u, "u")
    if u.shape[0] != m or u.shape[1] >= m:
        raise DimensionError(
            f"basis must be {m} x r with r < {m}, got {u.shape}"
        )
    if np.abs(u.T @ u - np.eye(u.shape[1])).max() > matlib.ORTHO_RTOL:
        raise PreconditionError("basis is not orthonormal within tolerance")
    r = u.shape[1]
    total = samples.mean_square().sum(axis=0)
    projected = np.mean(
        np.einsum("ji,kjl->kil", u, samples.mats) ** 2, axis=0
    ).sum(axis=0)
    resid = np.maximum(total - projected, SQRT_FLOOR)
    scale = np.sqrt(float(m - r)) * _rsqrt(resid)
    return CompensationScale(
        scale=scale, complement=matlib.qr_complement(u), shape=(m, n)
    )


def fit_general_blockdiag(samples: GradientSample) -> GeneralBlockDiag:
    """Per-column mean outer products; dense in m, so guarded to m <= 8."""
    m, _ = samples.shape
    if m > BLOCK_ROW_LIMIT:
        raise SizeGuardError(
            f"dense per-column blocks need m <= {BLOCK_ROW_LIMIT}, got {m}"
        )
    blocks = np.einsum("kin,kjn->nij", samples.mats, samples.mats) / samples.count
    return GeneralBlockDiag(blocks=blocks)


# ---------------------------------------------------------------------------
# Loss and preconditioner application
# ---------------------------------------------------------------------------


def structure_loss(factor: StructuredFactor, fim: EmpiricalFim) -> float:
    """Squared Frobenius distance between the dense structure and the estimate."""
    if factor.shape != fim.shape:
        raise DimensionError(
            f"factor shape {factor.shape} does not match estimate {fim.shape}"
        )
    diff = factor.dense() - fim.matrix
    return float(np.sum(diff**2))


def apply_preconditioner(factor: StructuredFactor, g) -> np.ndarray:
    """Apply the structure's inverse square root to a gradient matrix.

    Equals ``devec(F~^(-1/2) vec(G))`` with pseudo-inverse semantics where the
    structure is rank deficient, but computed in the structure's efficient
    form.  Zero entries in positive diagonal factors are floored at 1e-30.
    """
    g = matlib.as_matrix(g, "gradient")
    if g.shape != tuple(factor.shape):
        raise DimensionError(
            f"gradient shape {g.shape} does not match factor {factor.shape}"
        )
    m, n = g.shape
    if isinstance(factor, Diagonal):
        return g * _rsqrt(matlib.devec(factor.values, m, n))
    if isinstance(factor, KroneckerSqrt):
        return (
            matlib.sym_power(factor.left, -0.25)
            @ g
            @ matlib.sym_power(factor.right, -0.25)
        )
    if isinstance(factor, Whitening):
        return matlib.sym_power(factor.row_cov, -0.5) @ g
    if isinstance(factor, Normalization):
        return g * _rsqrt(factor.scale)[None, :]
    if isinstance(factor, SharedEigen):
        return factor.basis @ ((factor.basis.T @ g) * _rsqrt(factor.table))
    if isinstance(factor, SoapEigen):
        rotated = factor.left_basis.T @ g @ factor.right_basis
        return (
            factor.left_basis
            @ (rotated * _rsqrt(factor.table))
            @ factor.right_basis.T
        )
    if isinstance(factor, TwoSidedScaling):
        return g * _rsqrt(factor.row_scale)[:, None] * _rsqrt(factor.col_scale)[None, :]
    if isinstance(factor, CompensationScale):
        return factor.complement @ (factor.complement.T @ g) * factor.scale[None, :]
    if isinstance(factor, GeneralBlockDiag):
        out = np.empty_like(g)
        for i in range(n):
            out[:, i] = matlib.sym_power(factor.blocks[i], -0.5) @ g[:, i]
        return out
    raise DimensionError(f"unknown factor kind {type(factor).__name__}")


# ---------------------------------------------------------------------------
# Numerical oracle
# ---------------------------------------------------------------------------

ORACLE_FAMILIES = (
    "diagonal",
    "whitening",
    "normalization",
    "kron_right",
    "kron_left",
    "shared_eigen_table",
    "soap_table",
    "compensation_scale",
    "block_diag",
)


@dataclass(frozen=True)
class OracleFit:
    """Best iterate of the projected-gradient oracle for one family."""

    family: str
    params: np.ndarray
    loss: float
    converged: bool


class _Quadratic:
    """Exact reduced form of ||dense(theta) - F||_F^2 for a linear family."""

    def __init__(self, target, curvature, const, project, init):
        self.target = target  # unconstrained minimizer contribution
        self.curvature = curvature  # scalar multiplier on the quadratic term
        self.const = const
        self.project = project
        self.init = init

    def loss(self, theta):
        return float(self.curvature * np.sum((theta - self.target) ** 2) + self.const)

    def grad(self, theta):
        return 2.0 * self.curvature * (theta - self.target)


def _clamp(theta):
    return np.maximum(theta, 0.0)


def _symmetrize(theta):
    return 0.5 * (theta + theta.T)


def _symmetrize_blocks(theta):
    return 0.5 * (theta + np.transpose(theta, (0, 2, 1)))


def _diag_block_sum(fim: EmpiricalFim) -> np.ndarray:
    m, n = fim.shape
    out = np.zeros((m, m))
    for i in range(n):
        out += fim.block(i, i)
    return out


def _block_traces(fim: EmpiricalFim) -> np.ndarray:
    n = fim.shape[1]
    t = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            t[i, j] = np.trace(fim.block(i, j))
    return t


def _build_family(family, fim, basis, left_basis, right_basis, complement):
    m, n = fim.shape
    total = float(np.sum(fim.matrix**2))
    if family == "diagonal":
        c = np.diag(fim.matrix).copy()
        return _Quadratic(c, 1.0, total - float(c @ c), _clamp, np.ones(m * n))
    if family in ("whitening", "kron_left"):
        b = _diag_block_sum(fim) / n
        const = total - n * float(np.sum(b**2))
        return _Quadratic(b, float(n), const, _symmetrize, np.eye(m))
    if family == "normalization":
        t = np.array([np.trace(fim.block(i, i)) for i in range(n)]) / m
        const = total - m * float(t @ t)
        return _Quadratic(t, float(m), const, _clamp, np.ones(n))
    if family == "kron_right":
        t = _block_traces(fim) / m
        const = total - m * float(np.sum(t**2))
        return _Quadratic(t, float(m), const, _symmetrize, np.eye(n))
    if family == "shared_eigen_table":
        if basis is None:
            raise PreconditionError("shared_eigen_table needs a fixed basis")
        c = np.stack(
            [np.diag(basis.T @ fim.block(i, i) @ basis) for i in range(n)], axis=1
        )
        const = total - float(np.sum(c**2))
        return _Quadratic(c, 1.0, const, _clamp, np.ones((m, n)))
    if family == "soap_table":
        if left_basis is None or right_basis is None:
            raise PreconditionError("soap_table needs both fixed bases")
        rot = np.kron(right_basis, left_basis)
        c = matlib.devec(np.diag(rot.T @ fim.matrix @ rot), m, n)
        const = total - float(np.sum(c**2))
        return _Quadratic(c, 1.0, const, _clamp, np.ones((m, n)))
    if family == "compensation_scale":
        if complement is None:
            raise PreconditionError("compensation_scale needs the complement basis")
        proj = complement @ complement.T
        k = complement.shape[1]  # m - r
        t = np.array([np.sum(proj * fim.block(i, i)) for i in range(n)]) / k
        const = total - k * float(t @ t)

        def clamp_pos(theta):
            return np.maximum(theta, SQRT_FLOOR)

        return _Quadratic(t, float(k), const, clamp_pos, np.ones(n))
    if family == "block_diag":
        c = np.stack([fim.block(i, i) for i in range(n)])
        const = total - float(np.sum(c**2))
        init = np.stack([np.eye(m) for _ in range(n)])
        return _Quadratic(c, 1.0, const, _symmetrize_blocks, init)
    raise PreconditionError(f"unknown oracle family {family!r}")


def oracle_minimize(
    family: str,
    fim: EmpiricalFim,
    init=None,
    steps: int = 50_000,
    *,
    basis=None,
    left_basis=None,
    right_basis=None,
    complement=None,
) -> OracleFit:
    """Projected gradient descent on the family's free parameters.

    Step size starts at 1e-2 and halves whenever the loss would increase;
    iteration stops when the loss improves by less than 1e-12 or the step
    budget runs out (then the best iterate is returned with
    ``converged=False``).  For ``compensation_scale`` the free parameter is
    the inverse squared scale; the returned params are the scale itself.
    """
    m, n = fim.shape
    if m * n > FIM_SIZE_LIMIT:
        raise SizeGuardError(f"oracle needs m*n <= {FIM_SIZE_LIMIT}")
    prob = _build_family(family, fim, basis, left_basis, right_basis, complement)
    theta = prob.project(
        np.asarray(init, dtype=np.float64) if init is not None else prob.init
    )
    loss = prob.loss(theta)
    best_theta, best_loss = theta, loss
    rate = 1e-2
    converged = False
    for _ in range(steps):
        cand = prob.project(theta - rate * prob.grad(theta))
        cand_loss = prob.loss(cand)
        if cand_loss > loss:
            rate *= 0.5
            if rate < 1e-18:
                converged = True
                break
            continue
        improved = loss - cand_loss
        theta, loss = cand, cand_loss
        if loss < best_loss:
            best_theta, best_loss = theta, loss
        if improved < 1e-12:
            converged = True
            break
    params = best_theta
    if family == "compensation_scale":
        params = 1.0 / np.sqrt(np.maximum(best_theta, SQRT_FLOOR))
    return OracleFit(family=family, params=params, loss=best_loss, converged=converged)


def family_dense(family: str, params, fim_shape, *, basis=None, left_basis=None,
                 right_basis=None, complement=None) -> np.ndarray:
    """Materialize a family member densely from its free parameters."""
    m, n = fim_shape
    params = np.asarray(params, dtype=np.float64)
    if family == "diagonal":
        return matlib.diagv(params)
    if family in ("whitening", "kron_left"):
        return np.kron(np.eye(n), params)
    if family == "normalization":
        return np.kron(matlib.diagv(params), np.eye(m))
    if family == "kron_right":
        return np.kron(params, np.eye(m))
    if family == "shared_eigen_table":
        return SharedEigen(basis=basis, table=params).dense()
    if family == "soap_table":
        return SoapEigen(
            left_basis=left_basis, right_basis=right_basis, table=params
        ).dense()
    if family == "compensation_scale":
        proj = complement @ complement.T
        return np.kron(matlib.diagv(params**-2.0), proj)
    if family == "block_diag":
        return matlib.diagb(list(params))
    raise PreconditionError(f"unknown oracle family {family!r}")


# ---------------------------------------------------------------------------
# Certification sweep (used by the command-line verify entry point)
# ---------------------------------------------------------------------------

CERT_GAP_TOL = 1e-6

_TIER_SIZES = {
    "small": ((3, 2), (4, 4), (6, 5)),
    "medium": ((3, 2), (4, 4), (6, 5), (7, 8), (8, 8)),
}


@dataclass(frozen=True)
class CertRow:
    family: str
    worst_gap: float
    ok: bool
    detail: str = field(default="")


def _cert_samples(rng, m, n, count=50) -> GradientSample:
    left = rng.standard_normal((m, m)) / np.sqrt(m)
    right = rng.standard_normal((n, n)) / np.sqrt(n)
    mats = left @ rng.standard_normal((count, m, n)) @ right
    mats += 0.1 * rng.standard_normal((count, m, n))
    return GradientSample(mats)


def _analytic_params(family, samples):
    """Closed-form parameters plus the fixed-context kwargs for one family."""
    if family == "diagonal":
        return fit_diagonal(samples).values, {}
    if family == "whitening":
        return fit_whitening(samples).row_cov, {}
    if family == "kron_left":
        return fit_kronecker_shampoo(samples).left, {}
    if family == "kron_right":
        return fit_kronecker_shampoo(samples).right, {}
    if family == "normalization":
        return fit_normalization(samples).scale, {}
    if family == "shared_eigen_table":
        fitted = fit_shared_eigen(samples)
        return fitted.table, {"basis": fitted.basis}
    if family == "soap_table":
        fitted = fit_soap(samples)
        return fitted.table, {
            "left_basis": fitted.left_basis,
            "right_basis": fitted.right_basis,
        }
    if family == "compensation_scale":
        m = samples.shape[0]
        rank = max(1, m // 2)
        u = matlib.sym_eig(samples.mean_outer_rows(), k=rank).vectors
        fitted = fit_compensation_scale(samples, u)
        return fitted.scale, {"complement": fitted.complement}
    if family == "block_diag":
        return fit_general_blockdiag(samples).blocks, {}
    raise PreconditionError(f"unknown oracle family {family!r}")


def certify_families(
    seed: int,
    tier: str = "small",
    perturb: str | None = None,
    perturb_scale: float = 1e-3,
) -> list[CertRow]:
    """Compare every closed-form fit against the numerical oracle.

    Both sides are evaluated on the same dense objective; a family passes when
    the closed form is no worse than the oracle plus ``CERT_GAP_TOL`` on every
    instance.  ``perturb`` multiplies that family's closed-form parameters by
    ``1 + perturb_scale`` first (a self-test hook for the failure path).
    """
    if tier not in _TIER_SIZES:
        raise PreconditionError(f"unknown tier {tier!r}")
    if perturb is not None and perturb not in ORACLE_FAMILIES:
        raise PreconditionError(f"unknown family {perturb!r}")
    rows = []
    for family_idx, family in enumerate(ORACLE_FAMILIES):
        worst = -np.inf
        ok = True
        detail = ""
        for size_idx, (m, n) in enumerate(_TIER_SIZES[tier]):
            if family == "block_diag" and m > BLOCK_ROW_LIMIT:
                continue
            rng = np.random.default_rng((seed, size_idx, family_idx))
            samples = _cert_samples(rng, m, n)
            fim = build_empirical_fim(samples)
            params, context = _analytic_params(family, samples)
            if perturb == family:
                params = params * (1.0 + perturb_scale)
            analytic_dense = family_dense(family, params, fim.shape, **context)
            analytic_loss = float(np.sum((analytic_dense - fim.matrix) ** 2))
            fit = oracle_minimize(family, fim, **context)
            oracle_dense = family_dense(family, fit.params, fim.shape, **context)
            oracle_loss = float(np.sum((oracle_dense - fim.matrix) ** 2))
            gap = analytic_loss - oracle_loss
            if gap > worst:
                worst = gap
                detail = f"m={m} n={n}"
            if gap > CERT_GAP_TOL:
                ok = False
        rows.append(CertRow(family=family, worst_gap=float(worst), ok=ok, detail=detail))
    return rows
