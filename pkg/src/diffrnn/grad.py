"""Gradients of the smoothed cost with respect to the six parameter blocks.

Two routes compute the same quantity:

* :func:`gradient` accumulates adjoints backwards through the recurrence
  (cost ``O(S T H^2)``).
* :func:`gradient_reference` carries the full sensitivity matrices
  ``dm_t/da``, ``dm_t/dm0``, ``dm_t^(d)/dV`` and ``dm_t^(d)/dU`` forward in
  time, one sequence at a time. It is slow and exists to cross-check the
  first route.

Both route the derivative of every term through the pre-activations, which
are tied to the parameters by the recurrence.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .cost import _check_lam, _check_targets, diffused_cost
from .exceptions import DomainError, NumericError
from .model import BLOCK_NAMES, RnnParams, forward

__all__ = [
    "GradBlocks",
    "gradient",
    "gradient_reference",
    "state_jacobians",
    "FDReport",
    "fd_check",
    "numerical_gradient",
]

REFERENCE_BUDGET = 10_000


@dataclass
class GradBlocks:
    """Gradient blocks, shaped like the matching :class:`RnnParams` blocks."""

    da: np.ndarray
    db: np.ndarray
    dm0: np.ndarray
    dU: np.ndarray
    dV: np.ndarray
    dW: np.ndarray

    def blocks(self):
        return (self.da, self.db, self.dm0, self.dU, self.dV, self.dW)

    def to_vector(self):
        return np.concatenate([blk.ravel() for blk in self.blocks()])

    def norm(self):
        return float(np.linalg.norm(self.to_vector()))

    def __add__(self, other):
        return GradBlocks(*(x + y for x, y in zip(self.blocks(), other.blocks())))

    def __mul__(self, scalar):
        return GradBlocks(*(x * scalar for x in self.blocks()))

    __rmul__ = __mul__

    def as_dict(self):
        return dict(zip(BLOCK_NAMES, self.blocks()))

    @classmethod
    def zeros_like(cls, params):
        return cls(*(np.zeros_like(blk) for blk in params.blocks()))

    def check_finite(self):
        for name, blk in self.as_dict().items():
            if not np.all(np.isfinite(blk)):
                idx = tuple(int(i) for i in np.argwhere(~np.isfinite(blk))[0])
                raise NumericError("non-finite gradient", {"block": name, "index": idx})
        return self


def _direct_hidden(params, trace, lam):
    """Partial derivative of the regularizer block with respect to each ``m_t``.

    Shape ``(S, T + 1, H)``. Step ``t`` collects the W terms when
    ``t >= 1`` and the V terms when ``t <= T - 1``.
    """
    T = trace.m.shape[1] - 1
    H, Y = params.a.shape[0], params.b.shape[0]
    sigma2 = trace.sigma**2
    colW = (params.W**2).sum(axis=0)
    colV = (params.V**2).sum(axis=0)
    has_w = (np.arange(T + 1) >= 1).astype(float)[:, None]
    has_v = (np.arange(T + 1) <= T - 1).astype(float)[:, None]
    phi_dphi = trace.dphi_m * trace.phi_m
    weight = has_w * colW + has_v * colV
    scale = 2.0 * sigma2 * (has_w * Y + has_v * H)
    return lam * ((trace.dpsi_m - 2.0 * phi_dphi) * weight + scale * phi_dphi)


def _output_sensitivity(trace, dataset):
    y = _check_targets(dataset, trace.n)
    return (trace.dpsi_n - 2.0 * trace.dphi_n * y) * dataset.step_weights[None, :, None]


def gradient(params, dataset, act, sigma, lam=1.0, trace=None):
    """Gradient of :func:`~diffrnn.cost.diffused_cost`, summed over sequences.

    Returns
    -------
    GradBlocks
    """
    lam = _check_lam(lam)
    if trace is None:
        trace = forward(params, dataset.inputs, act, sigma)
    if not trace.has_squares:
        raise DomainError(f"{act!r} has no smoothed square at sigma={sigma}")
    x = dataset.inputs
    T = x.shape[1]

    g_n = _output_sensitivity(trace, dataset)
    direct = _direct_hidden(params, trace, lam)

    # r_t: everything m_t touches except the next hidden state
    r = direct.copy()
    r[:, 1:] += trace.dphi_m[:, 1:] * (g_n @ params.W)

    delta = np.empty_like(r)
    delta[:, T] = r[:, T]
    for t in range(T - 1, -1, -1):
        delta[:, t] = r[:, t] + trace.dphi_m[:, t] * (delta[:, t + 1] @ params.V)

    spread = trace.psi_m - trace.phi_m**2
    d_hidden = delta[:, 1:]
    grads = GradBlocks(
        da=d_hidden.sum(axis=(0, 1)),
        db=g_n.sum(axis=(0, 1)),
        dm0=delta[:, 0].sum(axis=0),
        dU=np.einsum("sth,stx->hx", d_hidden, x),
        dV=np.einsum("sth,stk->hk", d_hidden, trace.phi_m[:, :-1])
        + 2.0 * lam * params.V * spread[:, :-1].sum(axis=(0, 1)),
        dW=np.einsum("sty,sth->yh", g_n, trace.phi_m[:, 1:])
        + 2.0 * lam * params.W * spread[:, 1:].sum(axis=(0, 1)),
    )
    return grads.check_finite()


def gradient_reference(params, dataset, act, sigma, lam=1.0):
    """Forward-sensitivity transcription of the gradient (test oracle).

    For every sequence the matrices ``M_t = dm_t/da``, ``Q_t = dm_t/dm0``
    and, for each hidden unit ``d``, ``M_t^(d) = dm_t^(d)/dV`` and
    ``P_t^(d) = dm_t^(d)/dU`` are propagated explicitly. Refuses problems with
    ``H * max(X, H) * T`` above 10^4.
    """
    lam = _check_lam(lam)
    x_all = dataset.inputs
    S, T, X = x_all.shape
    H, Y = params.a.shape[0], params.b.shape[0]
    if H * max(X, H) * T > REFERENCE_BUDGET:
        raise DomainError(
            f"reference gradient refused: H*max(X,H)*T = {H * max(X, H) * T} exceeds {REFERENCE_BUDGET}"
        )
    a, b, m0, U, V, W = params.blocks()
    weights = dataset.step_weights
    s2 = float(sigma) ** 2
    I = np.eye(H)
    colW = np.ones(Y) @ (W * W)
    colV = np.ones(H) @ (V * V)

    da, db, dm0 = np.zeros(H), np.zeros(Y), np.zeros(H)
    dU, dV, dW = np.zeros((H, X)), np.zeros((H, H)), np.zeros((Y, H))
    spread_w, spread_v = np.zeros(H), np.zeros(H)

    for s in range(S):
        xs, ys = x_all[s], dataset.targets[s]
        # own forward pass, straight from the recurrence
        m = [m0.copy()]
        for t in range(1, T + 1):
            m.append(U @ xs[t - 1] + V @ act.diffused(m[t - 1], sigma) + a)
        n = [None] + [W @ act.diffused(m[t], sigma) + b for t in range(1, T + 1)]
        hm = [np.asarray(act.diffused(v, sigma)) for v in m]
        dhm = [np.asarray(act.diffused_deriv(v, sigma)) for v in m]
        h2m = [np.asarray(act.diffused_sq(v, sigma)) for v in m]
        dh2m = [np.asarray(act.diffused_sq_deriv(v, sigma)) for v in m]

        M = I.copy()
        Q = V @ np.diag(dhm[0])
        Md = np.zeros((H, H, H))
        Pd = np.zeros((H, H, X))
        for d in range(H):
            Md[d, d, :] = hm[0]
            Pd[d, d, :] = xs[0]

        # m0 enters only the V regularizer at t = 0
        dm0 += lam * ((dh2m[0] - 2.0 * dhm[0] * hm[0]) * colV + 2.0 * H * s2 * dhm[0] * hm[0])
        spread_v += h2m[0] - hm[0] ** 2

        for t in range(1, T + 1):
            g_n = weights[t - 1] * (
                np.asarray(act.diffused_sq_deriv(n[t], sigma))
                - 2.0 * np.asarray(act.diffused_deriv(n[t], sigma)) * ys[t - 1]
            )
            not_last = 1.0 if t != T else 0.0
            r = g_n @ (W @ np.diag(dhm[t])) + lam * (
                (dh2m[t] - 2.0 * dhm[t] * hm[t]) * (colW + not_last * colV)
                + 2.0 * s2 * (not_last * H + Y) * dhm[t] * hm[t]
            )
            db += g_n
            dW += np.outer(g_n, hm[t])
            da += r @ M
            dm0 += r @ Q
            for d in range(H):
                dV += r[d] * Md[d]
                dU += r[d] * Pd[d]
            spread_w += h2m[t] - hm[t] ** 2
            if t != T:
                spread_v += h2m[t] - hm[t] ** 2

            if t < T:
                # advance every sensitivity from step t to t + 1
                J = V @ np.diag(dhm[t])
                M = I + J @ M
                Q = J @ Q
                newMd = np.einsum("de,ejk->djk", J, Md)
                newPd = np.einsum("de,ejk->djk", J, Pd)
                for d in range(H):
                    newMd[d, d, :] += hm[t]
                    newPd[d, d, :] += xs[t]
                Md, Pd = newMd, newPd

    dW += 2.0 * lam * W @ np.diag(spread_w)
    dV += 2.0 * lam * V @ np.diag(spread_v)
    return GradBlocks(da, db, dm0, dU, dV, dW).check_finite()


def state_jacobians(params, inputs, act, sigma):
    """``M_t = dm_t/da`` for ``t = 1..T``, shape ``(S, T, H, H)``.

    Expanding the recursion gives ``M_t = I + V D_{t-1} + V D_{t-1} V D_{t-2} + ...``
    with ``D = diag(h~'(m))``, so ``M_t -> I`` when the smoothed derivative
    vanishes at large ``sigma``.
    """
    trace = forward(params, inputs, act, sigma)
    S, T1, H = trace.m.shape
    T = T1 - 1
    out = np.empty((S, T, H, H))
    M = np.broadcast_to(np.eye(H), (S, H, H)).copy()
    out[:, 0] = M
    for t in range(2, T + 1):
        J = params.V[None] * trace.dphi_m[:, t - 1][:, None, :]
        M = np.eye(H) + J @ M
        out[:, t - 1] = M
    return out


def numerical_gradient(params, dataset, act, sigma, lam=1.0, step=1e-5, coords=None):
    """Central differences of the smoothed cost over the flat parameter vector.

    Returns the full-length vector; coordinates outside ``coords`` are NaN.
    """
    dims = params.dims
    base = params.to_vector()
    coords = range(base.size) if coords is None else coords
    out = np.full(base.size, np.nan)
    for i in coords:
        probe = base.copy()
        probe[i] = base[i] + step
        up = diffused_cost(RnnParams.from_vector(probe, dims), dataset, act, sigma, lam).total
        probe[i] = base[i] - step
        down = diffused_cost(RnnParams.from_vector(probe, dims), dataset, act, sigma, lam).total
        out[i] = (up - down) / (2.0 * step)
    return out


def _coordinate_name(params, flat_index):
    offset = 0
    for name, blk in zip(BLOCK_NAMES, params.blocks()):
        if flat_index < offset + blk.size:
            idx = np.unravel_index(flat_index - offset, blk.shape)
            return name, tuple(int(i) for i in idx)
        offset += blk.size
    raise IndexError(flat_index)


@dataclass
class FDReport:
    """Outcome of a finite-difference gradient check.

    ``max_rel_err`` is ``max_i |g_i - fd_i| / max(|g_i|, |fd_i|, atol / rtol)``,
    so it stays below ``rtol`` exactly when every coordinate agrees within
    ``rtol`` relative or ``atol`` absolute.
    """

    max_rel_err: float
    worst_block: str
    worst_index: tuple
    analytic: float
    numeric: float
    n_checked: int
    step: float
    sigma: float
    lam: float
    rtol: float = 1e-4
    atol: float = 1e-7

    @property
    def passed(self):
        return self.max_rel_err <= self.rtol

    def to_json(self):
        row = asdict(self)
        row["worst_index"] = list(self.worst_index)
        row["passed"] = self.passed
        return json.dumps(row, sort_keys=True)


def fd_check(
    params,
    dataset,
    act,
    sigma,
    lam=1.0,
    step=1e-5,
    seed=0,
    max_coords=1000,
    rtol=1e-4,
    atol=1e-7,
    grad=None,
):
    """Compare an analytic gradient with central differences.

    All coordinates are checked when there are at most ``max_coords``;
    otherwise a seeded random subset of that size. ``grad`` may supply a
    precomputed :class:`GradBlocks` (e.g. a deliberately corrupted one).
    """
    if not step > 0:
        raise DomainError(f"finite-difference step must be positive, got {step}")
    if grad is None:
        grad = gradient(params, dataset, act, sigma, lam)
    analytic = grad.to_vector()
    size = analytic.size
    if size <= max_coords:
        coords = np.arange(size)
    else:
        coords = np.sort(np.random.default_rng(seed).choice(size, max_coords, replace=False))
    numeric = numerical_gradient(params, dataset, act, sigma, lam, step, coords)

    g, f = analytic[coords], numeric[coords]
    denom = np.maximum(np.maximum(np.abs(g), np.abs(f)), atol / rtol)
    err = np.abs(g - f) / denom
    worst = int(np.argmax(err))
    block, index = _coordinate_name(params, int(coords[worst]))
    return FDReport(
        max_rel_err=float(err[worst]),
        worst_block=block,
        worst_index=index,
        analytic=float(g[worst]),
        numeric=float(f[worst]),
        n_checked=int(coords.size),
        step=float(step),
        sigma=float(sigma),
        lam=float(lam),
        rtol=rtol,
        atol=atol,
    )


def cosine(u, v):
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return math.nan
    return float(np.dot(u.ravel(), v.ravel()) / (nu * nv))
