"""Continuation training, the SGD baseline and sampling-based smoothing.

The continuation loop walks a decreasing ladder of bandwidths
``sigma_0 > sigma_1 > ... > sigma_m >= 0``. At each rung it descends the
smoothed cost starting from the previous rung's solution, with step size
``eta * sigma`` (floored), so the learning rate anneals together with the
smoothing.

Gradient scaling: unnormalized steps use the gradient of the *mean* cost
over the current batch, so a learning rate does not depend on batch size.
Normalized steps only use the direction.
"""

import csv
import math
import time
from dataclasses import astuple, dataclass, field, fields

import numpy as np
from scipy import ndimage

from .cost import diffused_cost, mse, plain_cost
from .exceptions import DivergenceError, DomainError, NumericError
from .grad import GradBlocks, gradient
from .model import RnnParams

__all__ = [
    "ContinuationSchedule",
    "StepRule",
    "LogRow",
    "TrainLog",
    "step_size",
    "continuation_train",
    "sgd_train",
    "mc_diffused_gradient",
    "plain_gradient_batched",
    "grid_diffuse_demo",
    "ackley",
    "count_local_minima",
]


@dataclass(frozen=True)
class ContinuationSchedule:
    """Bandwidth ladder plus the inner-loop policy shared by every rung.

    ``max_epochs`` is an int (same budget per rung) or a sequence with one
    entry per rung. ``batch_size=None`` means full-batch gradient descent.
    """

    sigmas: tuple
    max_epochs: object = 50
    grad_tol: float = 1e-4
    batch_size: object = None

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigmas)
        if not sig:
            raise DomainError("schedule needs at least one sigma")
        if any(not math.isfinite(s) or s < 0 for s in sig):
            raise DomainError(f"sigmas must be finite and nonnegative: {sig}")
        if any(b >= a for a, b in zip(sig, sig[1:])):
            raise DomainError(f"sigmas must be strictly decreasing: {sig}")
        object.__setattr__(self, "sigmas", sig)
        budget = self.max_epochs
        if np.ndim(budget) == 0:
            budget = (int(budget),) * len(sig)
        budget = tuple(int(e) for e in budget)
        if len(budget) != len(sig) or any(e < 0 for e in budget):
            raise DomainError("max_epochs must be a nonnegative int or one per sigma")
        object.__setattr__(self, "max_epochs", budget)
        if self.batch_size is not None and int(self.batch_size) < 1:
            raise DomainError("batch_size must be positive")

    @classmethod
    def geometric(cls, sigma0=2.0, gamma=0.5, n_stages=6, final_zero=True, **kwargs):
        """``sigma_k = sigma0 * gamma**k`` for ``k < n_stages``, then optionally 0."""
        if not 0 < gamma < 1:
            raise DomainError("gamma must lie in (0, 1)")
        sigmas = [sigma0 * gamma**k for k in range(n_stages)]
        if final_zero:
            sigmas.append(0.0)
        return cls(tuple(sigmas), **kwargs)

    @property
    def total_epochs(self):
        return sum(self.max_epochs)


@dataclass(frozen=True)
class StepRule:
    """Step size ``max(eta * sigma, floor)``; ``normalize`` divides by the gradient norm."""

    eta: float = 0.1
    normalize: bool = True
    floor: float = 1e-3

    def __post_init__(self):
        if not self.eta > 0:
            raise DomainError("eta must be positive")
        if not self.floor > 0:
            raise DomainError("floor must be positive")


def step_size(rule, sigma):
    if sigma < 0:
        raise DomainError("sigma must be nonnegative")
    return max(rule.eta * sigma, rule.floor)


@dataclass(frozen=True)
class LogRow:
    stage: int
    epoch: int
    sigma: float
    step: float
    train_cost: float
    test_mse: float
    grad_norm: float
    wall_ms: float


LOG_COLUMNS = tuple(f.name for f in fields(LogRow))


@dataclass
class TrainLog:
    """One row per epoch. ``epoch`` counts epochs from the start of the run."""

    rows: list = field(default_factory=list)

    def append(self, row):
        if self.rows:
            last = self.rows[-1]
            if (row.stage, row.epoch) <= (last.stage, last.epoch):
                raise ValueError("log rows must be strictly ordered by (stage, epoch)")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def epochs_to(self, threshold, column="test_mse"):
        """First epoch whose ``column`` is at or below ``threshold`` (None if never)."""
        for r in self.rows:
            if getattr(r, column) <= threshold:
                return r.epoch
        return None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_COLUMNS)
            for r in self.rows:
                writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in astuple(r)])

    @classmethod
    def from_csv(cls, path):
        log = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for rec in reader:
                log.append(
                    LogRow(
                        int(rec["stage"]),
                        int(rec["epoch"]),
                        *(float(rec[c]) for c in LOG_COLUMNS[2:]),
                    )
                )
        return log


def _apply(params, grads, step):
    return RnnParams(*(p - step * g for p, g in zip(params.blocks(), grads.blocks())))


def _batches(n, batch_size, rng):
    if batch_size is None or batch_size >= n:
        yield np.arange(n)
        return
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _divergence(stage, epoch, err=None):
    where = {"stage": stage, "epoch": epoch}
    if err is not None and getattr(err, "location", None):
        where.update(err.location)
    return DivergenceError("training diverged", where)


# non-finite values are detected explicitly and raised as DivergenceError,
# so floating-point warnings during training carry no extra information
_quiet = np.errstate(over="ignore", invalid="ignore")


@_quiet
def continuation_train(
    params0,
    dataset,
    act,
    schedule,
    rule,
    lam=1.0,
    seed=0,
    test=None,
    stop_at=None,
):
    """Minimize the smoothed cost along a decreasing bandwidth ladder.

    Parameters
    ----------
    params0 : RnnParams
        Starting point for the first rung.
    dataset : SequenceDataset
        Training data.
    act : DiffusedActivation
    schedule : ContinuationSchedule
    rule : StepRule
    lam : float, default=1.0
    seed : int, default=0
        Seeds minibatch shuffling.
    test : SequenceDataset, optional
        Scored (unsmoothed last-step MSE) after every epoch; NaN if absent.
    stop_at : float, optional
        Stop the whole run once the test MSE reaches this value.

    Returns
    -------
    params : RnnParams
    log : TrainLog
    """
    rng = np.random.default_rng(seed)
    params = params0.copy()
    log = TrainLog()
    n = len(dataset)
    epoch = 0
    start = time.perf_counter()
    for stage, (sigma, budget) in enumerate(zip(schedule.sigmas, schedule.max_epochs)):
        step = step_size(rule, sigma)
        for _ in range(budget):
            epoch += 1
            try:
                for idx in _batches(n, schedule.batch_size, rng):
                    batch = dataset if idx.size == n else dataset.subset(idx)
                    g = gradient(params, batch, act, sigma, lam)
                    if rule.normalize:
                        norm = g.norm()
                        if norm == 0:
                            continue
                        params = _apply(params, g, step / norm)
                    else:
                        params = _apply(params, g, step / idx.size)
                full = gradient(params, dataset, act, sigma, lam)
                grad_norm = full.norm() / n
                cost = diffused_cost(params, dataset, act, sigma, lam).total
            except NumericError as err:
                raise _divergence(stage, epoch, err) from err
            if not (math.isfinite(cost) and math.isfinite(grad_norm)):
                raise _divergence(stage, epoch)
            test_mse = mse(params, test, act) if test is not None else math.nan
            log.append(
                LogRow(
                    stage,
                    epoch,
                    sigma,
                    step,
                    cost,
                    test_mse,
                    grad_norm,
                    1000.0 * (time.perf_counter() - start),
                )
            )
            if stop_at is not None and test_mse <= stop_at:
                return params, log
            if grad_norm < schedule.grad_tol:
                break
    return params, log


@_quiet
def sgd_train(params0, dataset, act, batch_size, lr, epochs, seed=0, test=None, stop_at=None):
    """Plain minibatch SGD on the unsmoothed cost.

    Each step subtracts ``lr`` times the batch-mean gradient. Shuffling is
    seeded. Logged ``train_cost`` is the unsmoothed cost on the full set.
    """
    n = len(dataset)
    if not 1 <= batch_size <= n:
        raise DomainError(f"batch_size must lie in [1, {n}], got {batch_size}")
    rng = np.random.default_rng(seed)
    params = params0.copy()
    log = TrainLog()
    start = time.perf_counter()
    for epoch in range(1, int(epochs) + 1):
        try:
            for idx in _batches(n, batch_size, rng):
                batch = dataset if idx.size == n else dataset.subset(idx)
                g = gradient(params, batch, act, 0.0, 0.0)
                if lr != 0:
                    params = _apply(params, g, lr / idx.size)
            grad_norm = gradient(params, dataset, act, 0.0, 0.0).norm() / n
            cost = plain_cost(params, dataset, act)
        except NumericError as err:
            raise _divergence(0, epoch, err) from err
        if not (math.isfinite(cost) and math.isfinite(grad_norm)):
            raise _divergence(0, epoch)
        test_mse = mse(params, test, act) if test is not None else math.nan
        log.append(
            LogRow(0, epoch, 0.0, float(lr), cost, test_mse, grad_norm, 1000.0 * (time.perf_counter() - start))
        )
        if stop_at is not None and test_mse <= stop_at:
            break
    return params, log


def plain_gradient_batched(stack, dataset, act):
    """Unsmoothed-cost gradients for a stack of J parameter sets at once.

    ``stack`` is a tuple ``(a, b, m0, U, V, W)`` whose arrays carry a leading
    axis of length J. Returns a tuple of gradient arrays with the same shapes.
    """
    a, b, m0, U, V, W = stack
    x, y, w = dataset.inputs, dataset.targets, dataset.step_weights
    J, H = a.shape
    S, T, _ = x.shape

    phi = np.empty((T + 1, J, S, H))
    dphi = np.empty((T + 1, J, S, H))
    phi[0] = np.broadcast_to(act.original(m0)[:, None, :], (J, S, H))
    dphi[0] = np.broadcast_to(act.original_deriv(m0)[:, None, :], (J, S, H))
    for t in range(1, T + 1):
        m = (
            np.einsum("jhx,sx->jsh", U, x[:, t - 1])
            + np.einsum("jhk,jsk->jsh", V, phi[t - 1])
            + a[:, None, :]
        )
        phi[t] = act.original(m)
        dphi[t] = act.original_deriv(m)
    n = np.einsum("jyh,tjsh->tjsy", W, phi[1:]) + b[None, :, None, :]
    yt = np.moveaxis(y, 1, 0)[:, None]  # (T, 1, S, Y)
    g_n = 2.0 * act.original_deriv(n) * (act.original(n) - yt) * w[:, None, None, None]

    da, dm0 = np.zeros_like(a), np.zeros_like(m0)
    dU, dV = np.zeros_like(U), np.zeros_like(V)
    carry = np.zeros((J, S, H))
    for t in range(T, 0, -1):
        delta = dphi[t] * (np.einsum("jsy,jyh->jsh", g_n[t - 1], W) + carry)
        da += delta.sum(axis=1)
        dU += np.einsum("jsh,sx->jhx", delta, x[:, t - 1])
        dV += np.einsum("jsh,jsk->jhk", delta, phi[t - 1])
        carry = np.einsum("jsh,jhk->jsk", delta, V)
    dm0 = (dphi[0] * carry).sum(axis=1)
    db = g_n.sum(axis=(0, 2))
    dW = np.einsum("tjsy,tjsh->jyh", g_n, phi[1:])
    return da, db, dm0, dU, dV, dW


def mc_diffused_gradient(params, dataset, act, sigma, lam=1.0, n_samples=1000, seed=0, chunk=5000):
    """Sampled gradient of the smoothed cost by noise injection.

    Averages ``grad f(w - t_j)`` over ``t_j ~ N(0, sigma^2 I)`` where ``f`` is
    the unsmoothed cost and ``w`` stacks all six blocks. ``lam`` only weights
    the recurrence penalty, which is identically zero when the pre-activations
    are defined by the recurrence, so it does not change the result.

    Samples are drawn chunk by chunk from ``default_rng([seed, k])``; the
    result is deterministic for a given ``(seed, chunk)``.
    """
    if int(n_samples) < 1:
        raise DomainError("n_samples must be at least 1")
    if not sigma > 0:
        raise DomainError("noise-injection gradient needs sigma > 0")
    n_samples = int(n_samples)
    blocks = params.blocks()
    totals = [np.zeros_like(blk) for blk in blocks]
    done = 0
    for k in range(math.ceil(n_samples / chunk)):
        J = min(chunk, n_samples - done)
        rng = np.random.default_rng([int(seed), k])
        stack = tuple(blk[None] - rng.normal(0.0, sigma, size=(J,) + blk.shape) for blk in blocks)
        for acc, g in zip(totals, plain_gradient_batched(stack, dataset, act)):
            acc += g.sum(axis=0)
        done += J
    return GradBlocks(*(acc / n_samples for acc in totals)).check_finite()


def ackley(x):
    """Ackley's function; ``x`` has the coordinate on the last axis."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    r = np.sqrt((x**2).sum(axis=-1) / d)
    c = np.cos(2.0 * np.pi * x).sum(axis=-1) / d
    return -20.0 * np.exp(-0.2 * r) - np.exp(c) + 20.0 + np.e


def grid_diffuse_demo(values, sigmas, spacing=1.0, truncate=4.0):
    """Gaussian-smooth a function tabulated on a uniform 1-D or 2-D grid.

    ``sigmas`` are in the same units as ``spacing``. Uses a truncated kernel
    with reflective padding. A bandwidth whose kernel radius would be under
    three grid cells is rejected (except ``sigma == 0``, the identity).

    Returns
    -------
    list of ndarray, one per sigma
    """
    values = np.asarray(values, dtype=float)
    if values.ndim not in (1, 2):
        raise DomainError("only 1-D and 2-D grids are supported")
    out = []
    for sigma in sigmas:
        sigma = float(sigma)
        if sigma < 0:
            raise DomainError("sigma must be nonnegative")
        if sigma == 0:
            out.append(values.copy())
            continue
        cells = sigma / spacing
        if int(truncate * cells + 0.5) < 3:
            raise DomainError(f"grid too coarse for sigma={sigma}: kernel radius under 3 cells")
        out.append(ndimage.gaussian_filter(values, cells, mode="reflect", truncate=truncate))
    return out


def count_local_minima(values):
    """Count strict interior local minima of a 1-D or 2-D tabulated function."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        inner = v[1:-1]
        return int(np.sum((inner < v[:-2]) & (inner < v[2:])))
    if v.ndim == 2:
        core = v[1:-1, 1:-1]
        mask = np.ones_like(core, dtype=bool)
        rows, cols = v.shape
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == dj == 0:
                    continue
                mask &= core < v[1 + di : rows - 1 + di, 1 + dj : cols - 1 + dj]
        return int(mask.sum())
    raise DomainError("only 1-D and 2-D grids are supported")
