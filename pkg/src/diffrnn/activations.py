"""Gaussian-diffused activation functions.

Every activation ``h`` is paired with its heat-kernel smoothed form
``h~_sigma = h * k_sigma`` where ``k_sigma`` is the zero-mean Gaussian density
with standard deviation ``sigma``. The smoothed cost of a recurrent network
also needs the smoothed square ``(h^2) * k_sigma`` and the x-derivatives of
both, so all four are exposed here. Everything is elementwise.
"""

import math

import numpy as np
from scipy.special import erf, ndtr

from .exceptions import DomainError, UnsupportedOperationError

__all__ = ["DiffusedActivation", "KINDS", "mc_convolution_oracle"]

KINDS = ("erf", "sign", "tanh", "relu")

_SQRT_PI = math.sqrt(math.pi)
_SQRT_2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _check_sigma(sigma):
    sigma = float(sigma)
    if not math.isfinite(sigma):
        raise DomainError(f"sigma must be finite, got {sigma}")
    if sigma < 0:
        raise DomainError(f"sigma must be nonnegative, got {sigma}")
    return sigma


def _check_x(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("input contains non-finite values")
    return arr


def _out(value, like):
    # scalar in, python float out
    if np.ndim(like) == 0:
        return float(value)
    return value


class DiffusedActivation:
    """An activation function together with its closed-form Gaussian smoothing.

    Parameters
    ----------
    kind : {"erf", "sign", "tanh", "relu"}
        Activation family. ``"erf"`` is ``erf(a x)``.
    a : float, default=1.0
        Sharpness of the ``erf`` kind; ignored by the other kinds.

    Notes
    -----
    ``diffused_sq`` for ``erf`` relies on ``erf(x)^2 ~ 1 - exp(-4 x^2 / pi)``
    (absolute error below 0.0115), so it is exact only at ``sigma == 0``,
    where the smoothing is the identity and ``h(x)^2`` is returned. For
    ``sign`` the smoothed square is exactly 1 for ``sigma > 0``. The
    ``tanh`` smoothing is itself an approximation (error below 0.02).
    """

    def __init__(self, kind="erf", a=1.0):
        kind = str(kind).lower()
        if kind not in KINDS:
            raise ValueError(f"unknown activation kind {kind!r}; expected one of {KINDS}")
        a = float(a)
        if not (math.isfinite(a) and a > 0):
            raise DomainError(f"sharpness a must be a positive finite number, got {a}")
        self.kind = kind
        self.a = a

    def __repr__(self):
        if self.kind == "erf":
            return f"DiffusedActivation(kind='erf', a={self.a!r})"
        return f"DiffusedActivation(kind={self.kind!r})"

    def __eq__(self, other):
        if not isinstance(other, DiffusedActivation):
            return NotImplemented
        return self.kind == other.kind and (self.kind != "erf" or self.a == other.a)

    def __hash__(self):
        return hash((self.kind, self.a if self.kind == "erf" else None))

    # ------------------------------------------------------------------ h(x)
    def original(self, x):
        """The unsmoothed activation ``h(x)``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "erf":
            y = erf(self.a * x)
        elif self.kind == "sign":
            y = np.sign(x)
        elif self.kind == "tanh":
            y = np.tanh(x)
        else:
            y = np.maximum(x, 0.0)
        return _out(y, x)

    def original_deriv(self, x):
        """``h'(x)``; sign is taken as 0 and relu as 1/2 at the kink."""
        x = np.asarray(x, dtype=float)
        if self.kind == "erf":
            y = (2.0 * self.a / _SQRT_PI) * np.exp(-((self.a * x) ** 2))
        elif self.kind == "sign":
            y = np.zeros_like(x)
        elif self.kind == "tanh":
            y = 1.0 - np.tanh(x) ** 2
        else:
            y = np.where(x > 0, 1.0, np.where(x < 0, 0.0, 0.5))
        return _out(y, x)

    # ---------------------------------------------------------------- h~(x)
    def diffused(self, x, sigma):
        """Smoothed activation ``[h * k_sigma](x)``."""
        sigma = _check_sigma(sigma)
        x = _check_x(x)
        if sigma == 0.0:
            return self.original(x)
        with np.errstate(over="ignore"):
            y = self._diffused_positive(x, sigma)
        return _out(y, x)

    def _diffused_positive(self, x, sigma):
        if self.kind == "erf":
            y = erf(self.a * x / math.sqrt(1.0 + 2.0 * (self.a * sigma) ** 2))
        elif self.kind == "sign":
            y = erf(x / (_SQRT_2 * sigma))
        elif self.kind == "tanh":
            y = np.tanh(x / math.sqrt(1.0 + 0.5 * math.pi * sigma**2))
        else:
            y = (sigma / _SQRT_2PI) * np.exp(-0.5 * (x / sigma) ** 2) + x * ndtr(x / sigma)
        return y

    def diffused_deriv(self, x, sigma):
        """x-derivative of :meth:`diffused`."""
        sigma = _check_sigma(sigma)
        x = _check_x(x)
        if self.kind == "erf":
            b = self.a / math.sqrt(1.0 + 2.0 * (self.a * sigma) ** 2)
            y = (2.0 * b / _SQRT_PI) * np.exp(-((b * x) ** 2))
        elif self.kind == "sign":
            if sigma == 0.0:
                if np.any(x == 0):
                    raise DomainError("derivative of sign is undefined at x = 0 when sigma = 0")
                y = np.zeros_like(x)
            else:
                y = 2.0 * np.exp(-0.5 * (x / sigma) ** 2) / (sigma * _SQRT_2PI)
        elif self.kind == "tanh":
            c = 1.0 / math.sqrt(1.0 + 0.5 * math.pi * sigma**2)
            y = c * (1.0 - np.tanh(c * x) ** 2)
        else:
            # d/dx of the smoothed relu collapses to the Gaussian cdf
            y = self.original_deriv(x) if sigma == 0.0 else ndtr(x / sigma)
        return _out(y, x)

    # -------------------------------------------------------------- h^2~(x)
    def diffused_sq(self, x, sigma):
        """Smoothed square ``[h^2 * k_sigma](x)``."""
        sigma = _check_sigma(sigma)
        x = _check_x(x)
        if sigma == 0.0:
            return _out(np.asarray(self.original(x)) ** 2, x)
        if self.kind == "erf":
            a2 = self.a**2
            denom = math.pi + 8.0 * a2 * sigma**2
            y = 1.0 - _SQRT_PI * np.exp(-4.0 * a2 * x**2 / denom) / math.sqrt(denom)
        elif self.kind == "sign":
            # limit a -> inf of the erf form; sign^2 = 1 almost everywhere
            y = np.ones_like(x)
        else:
            raise UnsupportedOperationError(
                f"no closed form for the smoothed square of {self.kind!r} at sigma > 0"
            )
        return _out(y, x)

    def diffused_sq_deriv(self, x, sigma):
        """x-derivative of :meth:`diffused_sq`."""
        sigma = _check_sigma(sigma)
        x = _check_x(x)
        if sigma == 0.0:
            if self.kind == "sign":
                if np.any(x == 0):
                    raise DomainError("derivative of sign^2 is undefined at x = 0 when sigma = 0")
                return _out(np.zeros_like(x), x)
            h = np.asarray(self.original(x))
            return _out(2.0 * h * np.asarray(self.original_deriv(x)), x)
        if self.kind == "erf":
            a2 = self.a**2
            denom = math.pi + 8.0 * a2 * sigma**2
            k = 4.0 * a2 / denom
            y = (_SQRT_PI / math.sqrt(denom)) * 2.0 * k * x * np.exp(-k * x**2)
        elif self.kind == "sign":
            y = np.zeros_like(x)
        else:
            raise UnsupportedOperationError(
                f"no closed form for the smoothed square of {self.kind!r} at sigma > 0"
            )
        return _out(y, x)

    def evaluate_all(self, x, sigma):
        """Return ``(h~, h~', h^2~, h^2~')`` at once (used by the forward pass)."""
        return (
            self.diffused(x, sigma),
            self.diffused_deriv(x, sigma),
            self.diffused_sq(x, sigma),
            self.diffused_sq_deriv(x, sigma),
        )


def mc_convolution_oracle(act, power, x, sigma, n_samples=1_000_000, seed=0):
    """Monte Carlo estimate of ``[h^power * k_sigma](x)``.

    Draws ``t_j ~ N(0, sigma^2)`` and averages ``h(x - t_j) ** power``.

    Returns
    -------
    mean, stderr : float
        Sample mean and its standard error ``std / sqrt(J)``.
    """
    if power not in (1, 2):
        raise DomainError(f"power must be 1 or 2, got {power}")
    sigma = _check_sigma(sigma)
    if sigma == 0.0:
        raise DomainError("the Monte Carlo oracle needs sigma > 0")
    x = float(_check_x(x))
    n_samples = int(n_samples)
    if n_samples < 1000:
        raise DomainError(f"n_samples must be at least 1000, got {n_samples}")
    rng = np.random.default_rng(seed)
    t = rng.normal(0.0, sigma, size=n_samples)
    values = np.asarray(act.original(x - t)) ** power
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(n_samples))
