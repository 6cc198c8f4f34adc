"""Smoothed training objective of the recurrent network.

With the hidden and output pre-activations fixed by the smoothed forward
pass, the cost for one sequence is::

    sum_t w_t [ ||h~(n_t) - y_t||^2 + sum(h^2~(n_t) - h~(n_t)^2) ]
    + lam * sum_{t=1..T}   [ sum_ij W_ij^2 (h^2~ - h~^2)(m_t)_j + sigma^2 Y ||h~(m_t)||^2 ]
    + lam * sum_{t=0..T-1} [ sum_ij V_ij^2 (h^2~ - h~^2)(m_t)_j + sigma^2 H ||h~(m_t)||^2 ]

``w_t`` are the dataset's step weights (all ones unless only the last step
is supervised). Constants that do not depend on any parameter are dropped.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .exceptions import DomainError, NumericError, ShapeError, UnsupportedOperationError
from .model import forward, predict

__all__ = [
    "CostBreakdown",
    "diffused_cost",
    "cost_terms",
    "plain_cost",
    "mse",
    "penalized_cost",
    "IdentityCheck",
    "quadratic_smoothing_identity_check",
]


@dataclass(frozen=True)
class CostBreakdown:
    fit: float
    variance: float
    w_reg: float
    v_reg: float
    total: float
    lam: float
    sigma: float


def _check_lam(lam):
    lam = float(lam)
    if not (math.isfinite(lam) and lam >= 0):
        raise DomainError(f"lambda must be a nonnegative finite number, got {lam}")
    return lam


def _check_targets(dataset, n):
    y = dataset.targets
    if y.shape != n.shape:
        raise ShapeError(f"targets have shape {y.shape}, network outputs {n.shape}")
    return y


def cost_terms(params, trace, dataset):
    """Per-(sequence, step) cost contributions.

    Returns four arrays: fit and variance of shape ``(S, T)`` indexed by
    ``t - 1``, and the W/V regularizer blocks of shape ``(S, T + 1)`` indexed
    by ``t`` (the W block is zero at ``t = 0``, the V block at ``t = T``).
    """
    if not trace.has_squares:
        raise UnsupportedOperationError("the activation has no smoothed square at this sigma")
    y = _check_targets(dataset, trace.n)
    w = dataset.step_weights
    sigma = trace.sigma
    H, Y = params.a.shape[0], params.b.shape[0]

    fit = ((trace.phi_n - y) ** 2).sum(axis=2) * w
    variance = (trace.psi_n - trace.phi_n**2).sum(axis=2) * w

    spread = trace.psi_m - trace.phi_m**2
    energy = (trace.phi_m**2).sum(axis=2)
    colW = (params.W**2).sum(axis=0)
    colV = (params.V**2).sum(axis=0)
    w_reg = spread @ colW + sigma**2 * Y * energy
    v_reg = spread @ colV + sigma**2 * H * energy
    w_reg[:, 0] = 0.0
    v_reg[:, -1] = 0.0
    return fit, variance, w_reg, v_reg


def _ordered_sum(arr):
    # sequence-major, then time; fsum keeps it independent of blocking
    total = math.fsum(arr.ravel(order="C"))
    if not math.isfinite(total):
        raise NumericError("non-finite cost accumulation")
    return total


def diffused_cost(params, dataset, act, sigma, lam=1.0, trace=None):
    """Evaluate the smoothed cost and its components.

    Parameters
    ----------
    params : RnnParams
    dataset : SequenceDataset
    act : DiffusedActivation
    sigma : float
    lam : float, default=1.0
        Weight of the regularizer block.
    trace : ForwardTrace, optional
        A trace computed for the same ``(params, dataset, sigma)`` to reuse.

    Returns
    -------
    CostBreakdown
    """
    lam = _check_lam(lam)
    if trace is None:
        trace = forward(params, dataset.inputs, act, sigma)
    fit, variance, w_reg, v_reg = cost_terms(params, trace, dataset)
    fit_s, var_s = _ordered_sum(fit), _ordered_sum(variance)
    w_s, v_s = _ordered_sum(w_reg), _ordered_sum(v_reg)
    total = math.fsum([fit_s, var_s, lam * w_s, lam * v_s])
    return CostBreakdown(fit_s, var_s, w_s, v_s, total, lam, trace.sigma)


def plain_cost(params, dataset, act):
    """Unsmoothed sum of squared errors ``sum_t w_t ||h(n_t) - y_t||^2``."""
    out = predict(params, dataset.inputs, act)
    err = ((out - _check_targets(dataset, out)) ** 2).sum(axis=2) * dataset.step_weights
    return _ordered_sum(err)


def mse(params, dataset, act, step="last"):
    """Mean squared error of the unsmoothed network.

    ``step="last"`` scores only the final output of each sequence, the
    usual metric for the adding problem; ``step="all"`` averages over every
    step. The mean is taken over sequences and output units.
    """
    if len(dataset) == 0:
        return float("nan")
    out = predict(params, dataset.inputs, act)
    y = _check_targets(dataset, out)
    if step == "last":
        return float(np.mean((out[:, -1] - y[:, -1]) ** 2))
    if step == "all":
        return float(np.mean((out - y) ** 2))
    raise ValueError(f"step must be 'last' or 'all', got {step!r}")


def penalized_cost(params, aux_n, aux_m, dataset, act, sigma, lam=1.0, return_terms=False):
    """Smoothed cost with free auxiliary pre-activations.

    ``aux_n`` (S, T, Y) and ``aux_m`` (S, T, H) stand in for ``n_1..n_T`` and
    ``m_1..m_T``; ``m_0`` is ``params.m0``. The recurrence is enforced only by
    the quadratic penalty::

        lam * ( ||W h~(m_t) + b - n_t||^2 + ||U x_t + V h~(m_{t-1}) + a - m_t||^2 )

    With ``return_terms=True`` a dict with ``data``, ``residual``, ``reg``
    and ``total`` is returned instead of the total alone.
    """
    lam = _check_lam(lam)
    x = dataset.inputs
    S, T, _ = x.shape
    H, Y = params.a.shape[0], params.b.shape[0]
    aux_n = np.asarray(aux_n, dtype=np.float64)
    aux_m = np.asarray(aux_m, dtype=np.float64)
    if aux_n.shape != (S, T, Y) or aux_m.shape != (S, T, H):
        raise ShapeError(
            f"aux_n must be {(S, T, Y)} and aux_m {(S, T, H)}, got {aux_n.shape} and {aux_m.shape}"
        )
    y = _check_targets(dataset, aux_n)
    w = dataset.step_weights

    m = np.concatenate([np.broadcast_to(params.m0, (S, 1, H)), aux_m], axis=1)
    phi_m = act.diffused(m, sigma)
    psi_m = act.diffused_sq(m, sigma)
    phi_n = act.diffused(aux_n, sigma)
    psi_n = act.diffused_sq(aux_n, sigma)

    data = ((phi_n - y) ** 2).sum(axis=2) * w + (psi_n - phi_n**2).sum(axis=2) * w
    out_res = phi_m[:, 1:] @ params.W.T + params.b - aux_n
    hid_res = x @ params.U.T + phi_m[:, :-1] @ params.V.T + params.a - aux_m
    residual = (out_res**2).sum(axis=2) + (hid_res**2).sum(axis=2)

    spread = psi_m - phi_m**2
    energy = (phi_m**2).sum(axis=2)
    w_reg = spread[:, 1:] @ (params.W**2).sum(axis=0) + sigma**2 * Y * energy[:, 1:]
    v_reg = spread[:, :-1] @ (params.V**2).sum(axis=0) + sigma**2 * H * energy[:, :-1]

    data_s = _ordered_sum(data)
    res_s = _ordered_sum(residual)
    reg_s = _ordered_sum(np.stack([w_reg, v_reg], axis=2))
    total = math.fsum([data_s, lam * res_s, lam * reg_s])
    if return_terms:
        return {"data": data_s, "residual": res_s, "reg": reg_s, "total": total}
    return total


@dataclass(frozen=True)
class IdentityCheck:
    """Monte Carlo left side versus closed-form right side of one identity."""

    name: str
    mc_mean: float
    mc_stderr: float
    closed_form: float
    approx_closed_form: float = field(default=float("nan"))

    @property
    def z_score(self):
        if self.mc_stderr == 0:
            return 0.0 if self.mc_mean == self.closed_form else math.inf
        return abs(self.mc_mean - self.closed_form) / self.mc_stderr

    def passed(self, n_stderr=3.0):
        return self.z_score <= n_stderr


def _smoothed_moment(act, power, x, sigma):
    """``E[h(x - t)^power]``, t ~ N(0, sigma^2), by adaptive quadrature."""
    if sigma == 0:
        return float(act.original(x)) ** power
    dens = lambda t: math.exp(-0.5 * (t / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))  # noqa: E731
    f = lambda t: float(act.original(x - t)) ** power * dens(t)  # noqa: E731
    lim = 12.0 * sigma
    points = [x] if -lim < x < lim else None
    value, _ = integrate.quad(f, -lim, lim, points=points, limit=200, epsabs=1e-13, epsrel=1e-12)
    return value


def quadratic_smoothing_identity_check(A, b, x, y, act, sigma, n_samples=1_000_000, seed=0):
    """Check the two Gaussian-smoothing identities behind the smoothed cost.

    1. ``E[((x - t)^T y)^2] = (x^T y)^2 + sigma^2 ||y||^2``
    2. ``E[||A h(x - t) + b||^2] = ||A h~(x) + b||^2
       + ||A diag(sqrt(h^2~(x)))||_F^2 - ||A diag(h~(x))||_F^2``

    with ``t ~ N(0, sigma^2 I)``. The right side of (2) is evaluated with the
    exact smoothed moments (one-dimensional quadrature per coordinate); when the
    activation has a closed-form smoothed square, the closed-form value is
    reported as ``approx_closed_form`` as well.

    Returns
    -------
    list of IdentityCheck
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = x.size
    if y.size != n or A.shape[1] != n or b.size != A.shape[0]:
        raise ShapeError("inconsistent shapes among A, b, x, y")
    if max(A.shape) > 8 or n > 8:
        raise ShapeError("identity check is limited to dimensions <= 8")
    sigma = float(sigma)
    if not sigma > 0:
        raise DomainError("identity check needs sigma > 0")

    rng = np.random.default_rng(seed)
    J = int(n_samples)
    t = rng.normal(0.0, sigma, size=(J, n))
    shifted = x - t

    ip = (shifted @ y) ** 2
    first = IdentityCheck(
        "inner_product_square",
        float(ip.mean()),
        float(ip.std(ddof=1) / math.sqrt(J)),
        float((x @ y) ** 2 + sigma**2 * (y @ y)),
    )

    sq = ((np.asarray(act.original(shifted)) @ A.T + b) ** 2).sum(axis=1)
    mean1 = np.array([_smoothed_moment(act, 1, xi, sigma) for xi in x])
    mean2 = np.array([_smoothed_moment(act, 2, xi, sigma) for xi in x])
    A2 = A**2
    exact = float(((A @ mean1 + b) ** 2).sum() + A2.sum(axis=0) @ (mean2 - mean1**2))
    try:
        phi = np.asarray(act.diffused(x, sigma))
        psi = np.asarray(act.diffused_sq(x, sigma))
        approx = float(((A @ phi + b) ** 2).sum() + A2.sum(axis=0) @ (psi - phi**2))
    except UnsupportedOperationError:
        approx = float("nan")
    second = IdentityCheck(
        "affine_activation_square",
        float(sq.mean()),
        float(sq.std(ddof=1) / math.sqrt(J)),
        exact,
        approx,
    )
    return [first, second]
