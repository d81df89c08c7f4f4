"""Small benchmark problems and a deterministic training loop.

Two problems cover the desk-scale experiments: a linear least-squares task
with controllable conditioning, and a one-hidden-layer tanh classifier on
Gaussian blobs.  Both expose the same little protocol:

* ``matrix_params``: names of parameters treated as matrices by the
  optimizer under test (everything else falls back to elementwise Adam);
* ``init_params(seed)``: dict of named float64 arrays;
* ``loss(params)`` / ``grads(params)``.

``train`` runs one optimizer kind over a problem and returns a RunRecord.
Divergence (non-finite or huge loss) stops the run and is flagged on the
record rather than raised, so sweeps can keep going.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .optim import make_optimizer

DIVERGENCE_LIMIT = 1e12


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------


class MatrixRegression:
    """Least squares  ||X W - Y||^2 / (2 N)  with a prescribed condition number.

    The design matrix is built from orthogonal factors and a log-spaced
    spectrum, scaled so the Hessian X^T X / N has eigenvalues in
    [cond**-2, 1].  That keeps learning-rate grids comparable across sizes.

    ``target`` controls how the true weights are drawn.  The default is a
    standard normal matrix, which concentrates the initial loss in the
    high-curvature modes.  ``"balanced"`` rescales the draw along the
    Hessian eigenbasis so every input mode carries the same loss mass on
    average; nothing then converges by accident, which makes the instance
    a sharper optimizer benchmark.  ``target_rank`` draws the weights as a
    rank-r factor product instead of a full-rank matrix.
    """

    matrix_params = ("w",)

    def __init__(self, n_samples: int, m: int, n: int, cond: float = 10.0,
                 noise: float = 0.0, seed: int = 0, target: str = "gaussian",
                 target_rank=None):
        if n_samples < m:
            raise DimensionError("need at least as many samples as input dims")
        if cond < 1.0:
            raise ConfigError("condition number must be >= 1")
        if target not in ("gaussian", "balanced"):
            raise ConfigError(f"unknown target kind: {target!r}")
        if target_rank is not None and not 1 <= target_rank <= min(m, n):
            raise ConfigError("target_rank must be in [1, min(m, n)]")
        rng = np.random.default_rng((seed, 0))
        u, _ = np.linalg.qr(rng.standard_normal((n_samples, m)))
        v, _ = np.linalg.qr(rng.standard_normal((m, m)))
        spectrum = np.logspace(0.0, -math.log10(cond), m) if cond > 1.0 else np.ones(m)
        self.x = math.sqrt(n_samples) * (u * spectrum) @ v.T
        if target_rank is None:
            w_true = rng.standard_normal((m, n))
        else:
            w_true = rng.standard_normal((m, target_rank)) @ \
                rng.standard_normal((target_rank, n)) / math.sqrt(target_rank)
        if target == "balanced":
            lam, vecs = np.linalg.eigh(self.x.T @ self.x / n_samples)
            w_true = vecs @ (w_true / np.sqrt(lam)[:, None])
        self.w_true = w_true
        self.y = self.x @ self.w_true
        if noise > 0.0:
            self.y = self.y + noise * rng.standard_normal(self.y.shape)
        self.shape = (m, n)
        self.n_samples = n_samples

    def init_params(self, seed: int = 0) -> dict:
        del seed  # zero init keeps the starting loss seed-independent
        return {"w": np.zeros(self.shape)}

    def loss(self, params: dict) -> float:
        r = self.x @ params["w"] - self.y
        return float(np.sum(r * r)) / (2.0 * self.n_samples)

    def grads(self, params: dict) -> dict:
        r = self.x @ params["w"] - self.y
        return {"w": self.x.T @ r / self.n_samples}

    def solution(self) -> np.ndarray:
        """Least-squares stationary point (gradient vanishes there)."""
        w, *_ = np.linalg.lstsq(self.x, self.y, rcond=None)
        return w


def make_blobs(n_per_class: int, dim: int, classes: int, seed: int = 0,
               spread: float = 0.8):
    """Gaussian clusters around random centers; returns (points, onehot)."""
    rng = np.random.default_rng((seed, 1))
    centers = 2.5 * rng.standard_normal((classes, dim))
    xs, ys = [], []
    for c in range(classes):
        xs.append(centers[c] + spread * rng.standard_normal((n_per_class, dim)))
        onehot = np.zeros((n_per_class, classes))
        onehot[:, c] = 1.0
        ys.append(onehot)
    return np.concatenate(xs), np.concatenate(ys)


class TinyMlp:
    """One tanh hidden layer, softmax cross-entropy, full-batch gradients.

    Weights are matrices; biases ride along on Adam regardless of which
    optimizer is being benchmarked.
    """

    matrix_params = ("w1", "w2")

    def __init__(self, dim: int = 6, hidden: int = 8, classes: int = 3,
                 n_per_class: int = 40, seed: int = 0):
        self.x, self.y = make_blobs(n_per_class, dim, classes, seed=seed)
        self.dim = dim
        self.hidden = hidden
        self.classes = classes

    def init_params(self, seed: int = 0) -> dict:
        rng = np.random.default_rng((seed, 2))
        return {
            "w1": rng.standard_normal((self.dim, self.hidden)) / math.sqrt(self.dim),
            "b1": np.zeros(self.hidden),
            "w2": rng.standard_normal((self.hidden, self.classes)) / math.sqrt(self.hidden),
            "b2": np.zeros(self.classes),
        }

    def _forward(self, params: dict):
        a = np.tanh(self.x @ params["w1"] + params["b1"])
        z = a @ params["w2"] + params["b2"]
        z = z - z.max(axis=1, keepdims=True)
        ez = np.exp(z)
        p = ez / ez.sum(axis=1, keepdims=True)
        return a, z, p

    def loss(self, params: dict) -> float:
        _, z, _ = self._forward(params)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return float(-(self.y * logp).sum() / self.x.shape[0])

    def grads(self, params: dict) -> dict:
        a, _, p = self._forward(params)
        batch = self.x.shape[0]
        dz = (p - self.y) / batch
        da = dz @ params["w2"].T
        dh = da * (1.0 - a * a)
        return {
            "w1": self.x.T @ dh,
            "b1": dh.sum(axis=0),
            "w2": a.T @ dz,
            "b2": dz.sum(axis=0),
        }


PROBLEM_KINDS = ("regression", "mlp")


def make_problem(kind: str, seed: int = 0, **options):
    if kind == "regression":
        opts = {"n_samples": 128, "m": 16, "n": 8, "cond": 10.0}
        opts.update(options)
        return MatrixRegression(seed=seed, **opts)
    if kind == "mlp":
        return TinyMlp(seed=seed, **options)
    raise ConfigError(f"unknown problem kind {kind!r}")


# ---------------------------------------------------------------------------
# Synthetic gradient stream with known second moments
# ---------------------------------------------------------------------------


class SyntheticGradientStream:
    """Draws G = L Z R + noise * E with iid standard normal Z and E.

    The exact second moments are available in closed form:
        E[G G^T] = tr(R R^T) L L^T + noise^2 * n * I
        E[G^T G] = tr(L L^T) R^T R + noise^2 * m * I
    which makes the stream a convenient oracle for covariance-matching tests.
    """

    def __init__(self, left, right, noise: float = 0.0, seed: int = 0):
        self.left = np.asarray(left, dtype=np.float64)
        self.right = np.asarray(right, dtype=np.float64)
        if self.left.ndim != 2 or self.left.shape[0] != self.left.shape[1]:
            raise DimensionError("left factor must be square")
        if self.right.ndim != 2 or self.right.shape[0] != self.right.shape[1]:
            raise DimensionError("right factor must be square")
        self.noise = float(noise)
        self.seed = int(seed)
        self.shape = (self.left.shape[0], self.right.shape[0])

    @classmethod
    def random(cls, m: int, n: int, seed: int = 0, noise: float = 0.0,
               decay: float = 2.0):
        """Factors with log-spaced spectra in random orthogonal bases."""
        rng = np.random.default_rng((seed, 3))
        ql, _ = np.linalg.qr(rng.standard_normal((m, m)))
        qr_, _ = np.linalg.qr(rng.standard_normal((n, n)))
        left = (ql * np.logspace(0.0, -decay, m)) @ ql.T
        right = (qr_ * np.logspace(0.0, -decay, n)) @ qr_.T
        return cls(left, right, noise=noise, seed=seed)

    def sample(self, count: int, batch_index: int = 0) -> np.ndarray:
        rng = np.random.default_rng((self.seed, 4, batch_index))
        m, n = self.shape
        z = rng.standard_normal((count, m, n))
        out = np.einsum("ij,kjl,lo->kio", self.left, z, self.right)
        if self.noise > 0.0:
            out = out + self.noise * rng.standard_normal((count, m, n))
        return out

    def row_covariance(self) -> np.ndarray:
        m, n = self.shape
        cov = float(np.sum(self.right * self.right)) * (self.left @ self.left.T)
        return cov + self.noise**2 * n * np.eye(m)

    def col_covariance(self) -> np.ndarray:
        m, n = self.shape
        cov = float(np.sum(self.left * self.left)) * (self.right.T @ self.right)
        return cov + self.noise**2 * m * np.eye(n)


# ---------------------------------------------------------------------------
# Learning-rate schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Linear warmup from zero to the base rate, then cosine decay to a floor.

    ``lr_at`` accepts any step in [0, total_steps].  The warmup boundary sits
    at ``warmup_frac * total_steps`` (not rounded), the rate there is exactly
    ``base_lr``, and the last step lands exactly on ``final_frac * base_lr``.
    """

    base_lr: float
    total_steps: int
    warmup_frac: float = 0.0
    final_frac: float = 0.1

    def __post_init__(self):
        if self.base_lr <= 0.0:
            raise ConfigError("base learning rate must be positive")
        if self.total_steps < 1:
            raise ConfigError("need at least one step")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ConfigError("warmup fraction must be in [0, 1)")
        if not 0.0 < self.final_frac <= 1.0:
            raise ConfigError("final fraction must be in (0, 1]")

    @property
    def warmup_steps(self) -> int:
        return int(math.ceil(self.warmup_frac * self.total_steps))

    def lr_at(self, step: int) -> float:
        if not 0 <= step <= self.total_steps:
            raise ConfigError(f"step must be in [0, {self.total_steps}]")
        w = self.warmup_frac * self.total_steps
        if step < w:
            return self.base_lr * step / w
        progress = (step - w) / (self.total_steps - w)
        cosine = 0.5 * (1.0 + math.cos(math.pi * progress))
        return self.base_lr * (self.final_frac + (1.0 - self.final_frac) * cosine)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    kind: str
    steps: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    elapsed_ms: list = field(default_factory=list)
    final_loss: float = math.nan
    diverged: bool = False
    diverged_step: int | None = None

    def rows(self):
        return zip(self.steps, self.losses, self.grad_norms, self.lrs,
                   self.elapsed_ms)

    def numeric_rows(self):
        """Rows without the wall-clock column, for determinism comparisons."""
        return list(zip(self.steps, self.losses, self.grad_norms, self.lrs))


def _global_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return math.sqrt(total)


def train(problem, kind: str, steps: int, schedule: Schedule | None = None,
          lr: float | None = None, seed: int = 0, hyper: dict | None = None,
          divergence_limit: float = DIVERGENCE_LIMIT) -> RunRecord:
    """Run ``kind`` on ``problem`` and record one row per step.

    Exactly one of ``schedule`` and ``lr`` must be given.  The loss column is
    evaluated at the pre-update iterate.  Non-matrix parameters always train
    with Adam at the same learning rate.
    """
    if (schedule is None) == (lr is None):
        raise ConfigError("pass exactly one of schedule/lr")
    if steps < 1:
        raise ConfigError("need at least one step")
    if schedule is not None and schedule.total_steps != steps:
        raise ConfigError("schedule length does not match the step count")

    params = problem.init_params(seed)
    hyper = dict(hyper or {})
    optimizers = {}
    for layer_id, (name, value) in enumerate(sorted(params.items())):
        if name in problem.matrix_params:
            kw = dict(hyper)
            if kind in ("alice", "alice0"):
                kw.setdefault("seed", seed)
                kw.setdefault("layer_id", layer_id)
            optimizers[name] = make_optimizer(kind, value.shape, **kw)
        else:
            optimizers[name] = make_optimizer("adam", value.shape)

    record = RunRecord(kind=kind)
    for t in range(1, steps + 1):
        t0 = time.perf_counter()
        loss = problem.loss(params)
        grads = problem.grads(params)
        lr_t = schedule.lr_at(t) if schedule is not None else lr
        gnorm = _global_norm(grads)
        bad = not math.isfinite(loss) or loss > divergence_limit
        record.steps.append(t)
        record.losses.append(loss)
        record.grad_norms.append(gnorm)
        record.lrs.append(lr_t)
        if bad:
            record.elapsed_ms.append((time.perf_counter() - t0) * 1e3)
            record.diverged = True
            record.diverged_step = t
            record.final_loss = loss
            return record
        for name, opt in optimizers.items():
            params[name] = params[name] + opt.step(grads[name], lr_t)
        record.elapsed_ms.append((time.perf_counter() - t0) * 1e3)

    record.final_loss = problem.loss(params)
    if not math.isfinite(record.final_loss) or record.final_loss > divergence_limit:
        record.diverged = True
        record.diverged_step = steps
    return record


def steps_to_threshold(record: RunRecord, threshold: float) -> int | None:
    """First recorded step whose loss is at or below the threshold."""
    for step, loss in zip(record.steps, record.losses):
        if loss <= threshold:
            return step
    return None
