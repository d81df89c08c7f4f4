"""Matrix-aware optimizers built on the structured second-moment fits.

Every optimizer is a mutable state dataclass plus a pure-ish step function
``xxx_step(state, grad, lr) -> (delta, state)`` where ``delta`` already
carries the minus sign (apply as ``W += delta``).  States are created by the
matching ``init_xxx`` helper and can be snapshotted to disk and restored.

Conventions shared by all steps:

* the division guard adds ``eps`` (default 1e-8) to the square root of any
  second-moment denominator;
* energy accumulators are floored at 1e-30 before square roots;
* optimizers that eigendecompose one side (the shared-basis, low-rank and
  SVD-projection methods) transpose internally when the gradient has more
  rows than columns, and transpose the update back;
* norm-growth limiting follows ``eta = gamma / max(norm / prev_norm, gamma)``
  with ``eta = 1`` on the first step, and the post-limit norm becomes the new
  reference.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import matlib
from .errors import ConfigError, DimensionError, NumericError
from .fim import SQRT_FLOOR, scaling_fixed_point

GROWTH_LIMIT = 1.01

# Reference configurations recorded from the published tuning tables.
RACS_REFERENCE = {"lr": 0.02, "beta": 0.9, "alpha": 0.05}
ALICE_REFERENCE_130M = {
    "lr": 0.02,
    "alpha": 0.3,
    "comp_scale": 0.4,
    "beta1": 0.9,
    "beta2": 0.9,
    "beta3": 0.999,
    "refresh_every": 200,
    "rank": 256,
    "leading": 40,
}


def _check_grad(g, shape) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != tuple(shape):
        raise DimensionError(f"gradient shape {g.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(g)):
        raise NumericError("gradient contains non-finite entries")
    return g


def _guarded_rsqrt(x, eps):
    return 1.0 / (np.sqrt(np.maximum(x, 0.0)) + eps)


def _floor_rsqrt(x):
    return 1.0 / np.sqrt(np.maximum(x, SQRT_FLOOR))


def limiter_scale(norm: float, prev_norm: float, gamma: float) -> float:
    """Norm-growth limit factor; 1.0 when there is no usable reference norm."""
    if prev_norm <= 0.0:
        return 1.0
    return gamma / max(norm / prev_norm, gamma)


def refresh_rng(seed: int, layer_id: int, refresh_index: int) -> np.random.Generator:
    """Counter-based generator keyed by (run seed, layer, refresh ordinal)."""
    ss = np.random.SeedSequence(entropy=(int(seed), int(layer_id), int(refresh_index)))
    return np.random.Generator(np.random.Philox(seed=ss))


def _work_orientation(shape) -> bool:
    """True when the optimizer should operate on the transposed gradient."""
    return shape[0] > shape[1]


# ---------------------------------------------------------------------------
# SGD / Adam
# ---------------------------------------------------------------------------


@dataclass
class SgdState:
    shape: tuple
    step: int = 0


def init_sgd(shape) -> SgdState:
    return SgdState(shape=tuple(shape))


def sgd_step(state: SgdState, g, lr: float):
    g = _check_grad(g, state.shape)
    state.step += 1
    return -lr * g, state


@dataclass
class AdamState:
    shape: tuple
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int
    beta1: float
    beta2: float
    eps: float
    bias_correction: bool


def init_adam(
    shape,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    bias_correction: bool = True,
) -> AdamState:
    shape = tuple(shape)
    return AdamState(
        shape=shape,
        first_moment=np.zeros(shape),
        second_moment=np.zeros(shape),
        step=0,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        bias_correction=bias_correction,
    )


def adam_step(state: AdamState, g, lr: float):
    g = _check_grad(g, state.shape)
    state.step += 1
    t = state.step
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * g
    state.second_moment = state.beta2 * state.second_moment + (1 - state.beta2) * g**2
    if state.bias_correction:
        m_hat = state.first_moment / (1.0 - state.beta1**t)
        v_hat = state.second_moment / (1.0 - state.beta2**t)
    else:
        m_hat = state.first_moment
        v_hat = state.second_moment
    delta = -lr * m_hat * _guarded_rsqrt(v_hat, state.eps)
    return delta, state


# ---------------------------------------------------------------------------
# Two-sided diagonal scaling with norm-growth limiting
# ---------------------------------------------------------------------------


@dataclass
class RacsState:
    shape: tuple
    col_scale: np.ndarray  # (n,)
    row_scale: np.ndarray  # (m,)
    limiter_norm: float
    step: int
    beta: float
    alpha: float
    gamma: float
    eps: float
    inner_iters: int


def init_racs(
    shape,
    beta: float = 0.9,
    alpha: float = 0.05,
    gamma: float = GROWTH_LIMIT,
    eps: float = 1e-8,
    inner_iters: int = 5,
) -> RacsState:
    m, n = shape
    return RacsState(
        shape=(m, n),
        col_scale=np.zeros(n),
        row_scale=np.zeros(m),
        limiter_norm=0.0,
        step=0,
        beta=beta,
        alpha=alpha,
        gamma=gamma,
        eps=eps,
        inner_iters=inner_iters,
    )


def racs_step(state: RacsState, g, lr: float):
    g = _check_grad(g, state.shape)
    state.step += 1
    # Single-sample fit of the diagonal two-sided scaling, floored so an
    # all-zero gradient degrades to a null update instead of erroring.
    col, row = scaling_fixed_point(
        g**2, iters=state.inner_iters, floor=SQRT_FLOOR
    )
    state.col_scale = state.beta * state.col_scale + (1 - state.beta) * col
    state.row_scale = state.beta * state.row_scale + (1 - state.beta) * row
    scaled = (
        g
        * _guarded_rsqrt(state.row_scale, state.eps)[:, None]
        * _guarded_rsqrt(state.col_scale, state.eps)[None, :]
    )
    norm = float(np.linalg.norm(scaled))
    eta = 1.0 if state.step == 1 else limiter_scale(norm, state.limiter_norm, state.gamma)
    state.limiter_norm = eta * norm
    return -lr * eta * state.alpha * scaled, state


# ---------------------------------------------------------------------------
# Shared-eigenbasis second moments (full rank)
# ---------------------------------------------------------------------------


@dataclass
class AliceCState:
    shape: tuple
    transpose: bool
    cov: np.ndarray  # (w, w) EMA of G G^T in work orientation
    basis: np.ndarray  # (w, w)
    first_moment: np.ndarray  # (w, k) raw-space EMA
    second_moment: np.ndarray  # (w, k) in the current basis
    step: int
    beta1: float
    beta2: float
    beta3: float
    eps: float
    refresh_every: int
    fixed_basis: np.ndarray | None


def init_alicec(
    shape,
    beta1: float = 0.9,
    beta2: float = 0.9,
    beta3: float = 0.999,
    eps: float = 1e-8,
    refresh_every: int = 200,
    fixed_basis=None,
) -> AliceCState:
    m, n = shape
    transpose = _work_orientation((m, n))
    w, k = (n, m) if transpose else (m, n)
    if fixed_basis is not None:
        fixed_basis = matlib.as_matrix(fixed_basis, "fixed basis")
        if fixed_basis.shape != (w, w):
            raise ConfigError(f"fixed basis must be ({w}, {w})")
        if np.abs(fixed_basis.T @ fixed_basis - np.eye(w)).max() > matlib.ORTHO_RTOL:
            raise ConfigError("fixed basis is not orthonormal")
    if refresh_every < 1:
        raise ConfigError("refresh interval must be >= 1")
    basis = fixed_basis if fixed_basis is not None else np.eye(w)
    return AliceCState(
        shape=(m, n),
        transpose=transpose,
        cov=np.zeros((w, w)),
        basis=basis.copy(),
        first_moment=np.zeros((w, k)),
        second_moment=np.zeros((w, k)),
        step=0,
        beta1=beta1,
        beta2=beta2,
        beta3=beta3,
        eps=eps,
        refresh_every=refresh_every,
        fixed_basis=None if fixed_basis is None else fixed_basis.copy(),
    )


def alicec_step(state: AliceCState, g, lr: float):
    g = _check_grad(g, state.shape)
    state.step += 1
    t = state.step
    gw = g.T if state.transpose else g
    state.cov = state.beta3 * state.cov + (1 - state.beta3) * (gw @ gw.T)
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * gw
    if state.fixed_basis is None and (t == 1 or t % state.refresh_every == 0):
        state.basis = matlib.sym_eig(state.cov).vectors
    rotated = state.basis.T @ gw
    state.second_moment = (
        state.beta2 * state.second_moment + (1 - state.beta2) * rotated**2
    )
    coeff = (state.basis.T @ state.first_moment) * _guarded_rsqrt(
        state.second_moment, state.eps
    )
    delta = -lr * (state.basis @ coeff)
    return (delta.T if state.transpose else delta), state


# ---------------------------------------------------------------------------
# Two-sided eigenbasis second moments
# ---------------------------------------------------------------------------


@dataclass
class SoapState:
    shape: tuple
    left_cov: np.ndarray  # (m, m)
    right_cov: np.ndarray  # (n, n)
    left_basis: np.ndarray
    right_basis: np.ndarray
    first_moment: np.ndarray  # (m, n) raw space
    second_moment: np.ndarray  # (m, n) rotated
    step: int
    beta1: float
    beta2: float
    beta3: float
    eps: float
    refresh_every: int
    fixed_left_basis: np.ndarray | None
    fixed_right_basis: np.ndarray | None


def _check_fixed_basis(basis, dim, label):
    if basis is None:
        return None
    basis = matlib.as_matrix(basis, label)
    if basis.shape != (dim, dim):
        raise ConfigError(f"{label} must be ({dim}, {dim})")
    if np.abs(basis.T @ basis - np.eye(dim)).max() > matlib.ORTHO_RTOL:
        raise ConfigError(f"{label} is not orthonormal")
    return basis.copy()


def init_soap(
    shape,
    beta1: float = 0.9,
    beta2: float = 0.9,
    beta3: float = 0.999,
    eps: float = 1e-8,
    refresh_every: int = 200,
    fixed_left_basis=None,
    fixed_right_basis=None,
) -> SoapState:
    m, n = shape
    if refresh_every < 1:
        raise ConfigError("refresh interval must be >= 1")
    fixed_left = _check_fixed_basis(fixed_left_basis, m, "fixed left basis")
    fixed_right = _check_fixed_basis(fixed_right_basis, n, "fixed right basis")
    return SoapState(
        shape=(m, n),
        left_cov=np.zeros((m, m)),
        right_cov=np.zeros((n, n)),
        left_basis=(fixed_left if fixed_left is not None else np.eye(m)).copy(),
        right_basis=(fixed_right if fixed_right is not None else np.eye(n)).copy(),
        first_moment=np.zeros((m, n)),
        second_moment=np.zeros((m, n)),
        step=0,
        beta1=beta1,
        beta2=beta2,
        beta3=beta3,
        eps=eps,
        refresh_every=refresh_every,
        fixed_left_basis=fixed_left,
        fixed_right_basis=fixed_right,
    )


def soap_step(state: SoapState, g, lr: float):
    g = _check_grad(g, state.shape)
    state.step += 1
    t = state.step
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * g
    state.left_cov = state.beta3 * state.left_cov + (1 - state.beta3) * (g @ g.T)
    state.right_cov = state.beta3 * state.right_cov + (1 - state.beta3) * (g.T @ g)
    if t == 1 or t % state.refresh_every == 0:
        if state.fixed_left_basis is None:
            state.left_basis = matlib.sym_eig(state.left_cov).vectors
        if state.fixed_right_basis is None:
            state.right_basis = matlib.sym_eig(state.right_cov).vectors
    rot_g = state.left_basis.T @ g @ state.right_basis
    state.second_moment = (
        state.beta2 * state.second_moment + (1 - state.beta2) * rot_g**2
    )
    rot_m = state.left_basis.T @ state.first_moment @ state.right_basis
    inner = rot_m * _guarded_rsqrt(state.second_moment, state.eps)
    delta = -lr * (state.left_basis @ inner @ state.right_basis.T)
    return delta, state


# ---------------------------------------------------------------------------
# Kronecker-root accumulation
# ---------------------------------------------------------------------------


@dataclass
class ShampooState:
    shape: tuple
    left: np.ndarray  # (m, m) running sum of G G^T
    right: np.ndarray  # (n, n) running sum of G^T G
    step: int
    eps: float


def init_shampoo(shape, eps: float = 1e-12) -> ShampooState:
    m, n = shape
    return ShampooState(
        shape=(m, n),
        left=eps * np.eye(m),
        right=eps * np.eye(n),
        step=0,
        eps=eps,
    )


def shampoo_step(state: ShampooState, g, lr: float):
    g = _check_grad(g, state.shape)
    state.step += 1
    state.left = state.left + g @ g.T
    state.right = state.right + g.T @ g
    delta = -lr * (
        matlib.sym_power(state.left, -0.25) @ g @ matlib.sym_power(state.right, -0.25)
    )
    return delta, state


# ---------------------------------------------------------------------------
# Subspace switching and residual compensation
# ---------------------------------------------------------------------------


def subspace_switch(cov, rank: int, leading: int, prev_basis, rng) -> np.ndarray:
    """One refresh of a rank-``rank`` basis with exploration mixing.

    Runs a single round of subspace iteration from ``prev_basis``, keeps the
    ``leading`` strongest directions, and fills the remainder with a uniform
    draw (without replacement) from an orthonormal basis of the complement.
    With ``rank == dim`` or ``leading == rank`` no sampling happens.
    """
    cov = matlib.as_matrix(cov, "cov")
    dim = cov.shape[0]
    if not 1 <= leading <= rank <= dim:
        raise DimensionError(f"need 1 <= leading <= rank <= {dim}")
    refreshed = matlib.subspace_iteration(cov, prev_basis, steps=1).vectors
    if rank >= dim or leading == rank:
        return refreshed
    extra = rank - leading
    comp = matlib.qr_complement(refreshed)
    if extra > comp.shape[1]:
        raise DimensionError(
            f"cannot sample {extra} directions from a {comp.shape[1]}-dim complement"
        )
    idx = np.sort(rng.choice(comp.shape[1], size=extra, replace=False))
    return np.concatenate([refreshed[:, :leading], comp[:, idx]], axis=1)


def compensate(g, basis, energy, prev_norm: float, gamma: float, beta: float):
    """Low-rank residual correction with its own norm-growth limiter.

    Returns ``(correction, energy', norm')`` where ``energy`` tracks the
    per-column squared residual mass outside ``span(basis)`` via the closed
    form (column energy minus projected energy, clamped at zero).
    """
    g = matlib.as_matrix(g, "gradient")
    basis = matlib.as_matrix(basis, "basis")
    m, r = basis.shape
    if g.shape[0] != m:
        raise DimensionError("basis and gradient row counts differ")
    proj = basis.T @ g
    fresh = np.maximum((g**2).sum(axis=0) - (proj**2).sum(axis=0), 0.0)
    energy = np.maximum(beta * energy + (1 - beta) * fresh, 0.0)
    resid = g - basis @ proj
    corr = np.sqrt(float(m - r)) * resid * _floor_rsqrt(energy)[None, :]
    norm = float(np.linalg.norm(corr))
    eta = limiter_scale(norm, prev_norm, gamma)
    corr = eta * corr
    return corr, energy, float(eta * norm)


# ---------------------------------------------------------------------------
# Low-rank tracked eigenbasis optimizer (and its tracking-free variant)
# ---------------------------------------------------------------------------


@dataclass
class AliceState:
    shape: tuple
    transpose: bool
    rank: int
    leading: int
    basis: np.ndarray  # (w, rank)
    proj_cov: np.ndarray | None  # (rank, rank) when tracking
    first_moment: np.ndarray  # (rank, k) projected
    second_moment: np.ndarray  # (rank, k) projected
    comp_energy: np.ndarray  # (k,)
    comp_norm: float
    step: int
    refresh_count: int
    alpha: float
    comp_scale: float
    beta1: float
    beta2: float
    beta3: float
    gamma: float
    eps: float
    refresh_every: int
    tracking: bool
    switching: bool
    compensation: bool
    seed: int
    layer_id: int


def init_alice(
    shape,
    rank: int,
    leading: int | None = None,
    alpha: float = 0.3,
    comp_scale: float = 0.4,
    beta1: float = 0.9,
    beta2: float = 0.9,
    beta3: float = 0.999,
    gamma: float = GROWTH_LIMIT,
    eps: float = 1e-8,
    refresh_every: int = 200,
    tracking: bool = True,
    switching: bool = True,
    compensation: bool = True,
    seed: int = 0,
    layer_id: int = 0,
) -> AliceState:
    m, n = shape
    transpose = _work_orientation((m, n))
    w, k = (n, m) if transpose else (m, n)
    if not 1 <= rank <= w:
        raise ConfigError(f"rank must be in [1, {w}], got {rank}")
    if leading is None:
        leading = rank
    if not 1 <= leading <= rank:
        raise ConfigError(f"leading must be in [1, {rank}], got {leading}")
    if switching and rank < w and rank - leading > w - rank:
        raise ConfigError(
            f"switching cannot sample {rank - leading} directions from a "
            f"{w - rank}-dim complement"
        )
    if refresh_every < 1:
        raise ConfigError("refresh interval must be >= 1")
    return AliceState(
        shape=(m, n),
        transpose=transpose,
        rank=rank,
        leading=leading,
        basis=np.zeros((w, rank)),
        proj_cov=np.zeros((rank, rank)) if tracking else None,
        first_moment=np.zeros((rank, k)),
        second_moment=np.zeros((rank, k)),
        comp_energy=np.zeros(k),
        comp_norm=0.0,
        step=0,
        refresh_count=0,
        alpha=alpha,
        comp_scale=comp_scale,
        beta1=beta1,
        beta2=beta2,
        beta3=beta3,
        gamma=gamma,
        eps=eps,
        refresh_every=refresh_every,
        tracking=tracking,
        switching=switching,
        compensation=compensation,
        seed=seed,
        layer_id=layer_id,
    )


def init_alice_zero(shape, rank: int, **kwargs) -> AliceState:
    """Tracking-free variant: rebuilds the refresh target from the current step."""
    kwargs["tracking"] = False
    return init_alice(shape, rank, **kwargs)


def alice_step(state: AliceState, g, lr: float):
    g = _check_grad(g, state.shape)
    state.step += 1
    t = state.step
    gw = g.T if state.transpose else g
    w = gw.shape[0]
    if t == 1 or t % state.refresh_every == 0:
        if state.tracking:
            target = state.beta3 * (
                state.basis @ state.proj_cov @ state.basis.T
            ) + (1 - state.beta3) * (gw @ gw.T)
        else:
            target = gw @ gw.T
        if state.switching:
            rng = refresh_rng(state.seed, state.layer_id, state.refresh_count)
            new_basis = subspace_switch(
                target, state.rank, state.leading, state.basis, rng
            )
        else:
            new_basis = matlib.sym_eig(target, k=state.rank).vectors
        # Carry linear state into the new coordinates so the projected view
        # stays consistent with what the basis reconstructs.
        rot = new_basis.T @ state.basis
        state.first_moment = rot @ state.first_moment
        if state.tracking:
            state.proj_cov = rot @ state.proj_cov @ rot.T
        state.basis = new_basis
        state.refresh_count += 1
    sigma = state.basis.T @ gw
    if state.tracking:
        state.proj_cov = state.beta3 * state.proj_cov + (1 - state.beta3) * (
            sigma @ sigma.T
        )
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * sigma
    state.second_moment = (
        state.beta2 * state.second_moment + (1 - state.beta2) * sigma**2
    )
    direction = state.first_moment * _guarded_rsqrt(state.second_moment, state.eps)
    delta = state.basis @ direction
    if state.compensation and state.comp_scale != 0.0 and state.rank < w:
        corr, energy, norm = compensate(
            gw, state.basis, state.comp_energy, state.comp_norm, state.gamma, state.beta1
        )
        state.comp_energy = energy
        state.comp_norm = norm
        delta = delta + state.comp_scale * corr
    delta = -lr * state.alpha * delta
    return (delta.T if state.transpose else delta), state


# ---------------------------------------------------------------------------
# SVD projection with an inner Adam
# ---------------------------------------------------------------------------


@dataclass
class GaloreState:
    shape: tuple
    transpose: bool
    rank: int
    basis: np.ndarray  # (w, rank)
    first_moment: np.ndarray  # (rank, k)
    second_moment: np.ndarray  # (rank, k)
    step: int
    alpha: float
    beta1: float
    beta2: float
    eps: float
    refresh_every: int
    bias_correction: bool


def init_galore(
    shape,
    rank: int,
    alpha: float = 0.3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    refresh_every: int = 200,
    bias_correction: bool = True,
) -> GaloreState:
    m, n = shape
    transpose = _work_orientation((m, n))
    w, k = (n, m) if transpose else (m, n)
    if not 1 <= rank <= w:
        raise ConfigError(f"rank must be in [1, {w}], got {rank}")
    if refresh_every < 1:
        raise ConfigError("refresh interval must be >= 1")
    return GaloreState(
        shape=(m, n),
        transpose=transpose,
        rank=rank,
        basis=np.zeros((w, rank)),
        first_moment=np.zeros((rank, k)),
        second_moment=np.zeros((rank, k)),
        step=0,
        alpha=alpha,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        refresh_every=refresh_every,
        bias_correction=bias_correction,
    )


def galore_step(state: GaloreState, g, lr: float):
    g = _check_grad(g, state.shape)
    state.step += 1
    t = state.step
    gw = g.T if state.transpose else g
    if t == 1 or t % state.refresh_every == 0:
        u, _, _ = np.linalg.svd(gw, full_matrices=False)
        state.basis = u[:, : state.rank]
    sigma = state.basis.T @ gw
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * sigma
    state.second_moment = (
        state.beta2 * state.second_moment + (1 - state.beta2) * sigma**2
    )
    if state.bias_correction:
        m_hat = state.first_moment / (1.0 - state.beta1**t)
        v_hat = state.second_moment / (1.0 - state.beta2**t)
    else:
        m_hat = state.first_moment
        v_hat = state.second_moment
    inner = m_hat * _guarded_rsqrt(v_hat, state.eps)
    delta = -lr * state.alpha * (state.basis @ inner)
    return (delta.T if state.transpose else delta), state


# ---------------------------------------------------------------------------
# Standalone gradient operators
# ---------------------------------------------------------------------------


def normalize_op(g, eps: float = 1e-8) -> np.ndarray:
    """Scale each column to (guarded) unit norm."""
    g = matlib.as_matrix(g, "gradient")
    col_sq = (g**2).sum(axis=0)
    return g * _guarded_rsqrt(col_sq, eps)[None, :]


def whiten_op(g) -> np.ndarray:
    """Left-whiten: (G G^T)^(-1/2) G, pseudo-inverse when rank deficient."""
    g = matlib.as_matrix(g, "gradient")
    return matlib.sym_power(g @ g.T, -0.5) @ g


# ---------------------------------------------------------------------------
# Memory accounting, registry, snapshots
# ---------------------------------------------------------------------------

LOW_RANK_KINDS = ("galore", "alice", "alice0")

OPTIMIZER_KINDS = (
    "sgd",
    "adam",
    "racs",
    "alicec",
    "soap",
    "shampoo",
    "galore",
    "alice",
    "alice0",
)


def memory_estimate(kind: str, m: int, n: int, r: int | None = None) -> int:
    """Float count of weight plus optimizer state for an m x n parameter."""
    if kind not in OPTIMIZER_KINDS:
        raise ConfigError(f"unknown optimizer kind {kind!r}")
    if m < 1 or n < 1:
        raise ConfigError("dimensions must be positive")
    if kind in LOW_RANK_KINDS:
        if r is None:
            raise ConfigError(f"{kind} needs the projection rank r")
        if r < 1:
            raise ConfigError("rank must be positive")
    mn = m * n
    if kind == "sgd":
        return mn
    if kind == "adam":
        return 3 * mn
    if kind == "racs":
        return mn + m + n + 1
    if kind == "alicec":
        return 3 * mn + 2 * m * m
    if kind == "soap":
        return 3 * mn + 2 * m * m + 2 * n * n
    if kind == "shampoo":
        return mn + m * m + n * n
    if kind == "galore":
        return mn + 2 * n * r + m * r
    if kind == "alice":
        return mn + 2 * n * r + m * r + n + r * r
    return mn + 2 * n * r + m * r + n  # alice0


_INIT_FNS = {
    "sgd": init_sgd,
    "adam": init_adam,
    "racs": init_racs,
    "alicec": init_alicec,
    "soap": init_soap,
    "shampoo": init_shampoo,
    "galore": init_galore,
    "alice": init_alice,
    "alice0": init_alice_zero,
}

_STEP_FNS = {
    "sgd": sgd_step,
    "adam": adam_step,
    "racs": racs_step,
    "alicec": alicec_step,
    "soap": soap_step,
    "shampoo": shampoo_step,
    "galore": galore_step,
    "alice": alice_step,
    "alice0": alice_step,
}

_STATE_KINDS = {
    SgdState: "sgd",
    AdamState: "adam",
    RacsState: "racs",
    AliceCState: "alicec",
    SoapState: "soap",
    ShampooState: "shampoo",
    GaloreState: "galore",
    AliceState: "alice",
}

_STATE_TYPES = {
    "sgd": SgdState,
    "adam": AdamState,
    "racs": RacsState,
    "alicec": AliceCState,
    "soap": SoapState,
    "shampoo": ShampooState,
    "galore": GaloreState,
    "alice": AliceState,
}


class Optimizer:
    """One optimizer instance bound to a single parameter."""

    def __init__(self, kind: str, state):
        self.kind = kind
        self.state = state
        self._step_fn = _STEP_FNS[kind]

    def step(self, g, lr: float) -> np.ndarray:
        delta, self.state = self._step_fn(self.state, g, lr)
        return delta


def make_optimizer(kind: str, shape, **hyper) -> Optimizer:
    if kind not in _INIT_FNS:
        raise ConfigError(f"unknown optimizer kind {kind!r}")
    try:
        state = _INIT_FNS[kind](shape, **hyper)
    except TypeError as exc:
        raise ConfigError(f"bad options for {kind}: {exc}") from None
    return Optimizer(kind, state)


SNAPSHOT_VERSION = 1


def snapshot_state(state, path) -> None:
    """Serialize an optimizer state; fields are stored under their own names
    in dataclass declaration order, with None-valued fields omitted."""
    kind = _STATE_KINDS.get(type(state))
    if kind is None:
        raise ConfigError(f"cannot snapshot {type(state).__name__}")
    payload = {"snapshot_kind": kind, "snapshot_version": SNAPSHOT_VERSION}
    for f in dataclasses.fields(state):
        value = getattr(state, f.name)
        if value is None:
            continue
        payload[f"field_{f.name}"] = np.asarray(value)
    # Write through a handle so the exact path is honored (savez would
    # append .npz to a bare name).
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def restore_state(path):
    """Inverse of :func:`snapshot_state`."""
    with np.load(path, allow_pickle=False) as data:
        kind = data["snapshot_kind"].item()
        version = int(data["snapshot_version"])
        if version != SNAPSHOT_VERSION:
            raise ConfigError(f"unsupported snapshot version {version}")
        cls = _STATE_TYPES.get(kind)
        if cls is None:
            raise ConfigError(f"unknown snapshot kind {kind!r}")
        kwargs = {}
        for f in dataclasses.fields(cls):
            key = f"field_{f.name}"
            if key not in data:
                kwargs[f.name] = None
                continue
            value = data[key]
            if value.ndim == 0:
                kwargs[f.name] = value.item()
            elif f.name == "shape":
                kwargs[f.name] = tuple(int(x) for x in value)
            else:
                kwargs[f.name] = value
    return cls(**kwargs)
