"""Recurrent network parameters and the smoothed forward pass.

The network maps an input sequence ``x_1..x_T`` to outputs through::

    m_t = U x_t + V h~(m_{t-1}) + a        (m_0 is a learned vector)
    n_t = W h~(m_t) + b

where ``h~`` is the activation smoothed at bandwidth ``sigma``. At
``sigma = 0`` this is an ordinary Elman network and the prediction is
``h(n_t)``.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import DataFormatError, NumericError, ShapeError, UnsupportedOperationError, VersionMismatchError

__all__ = [
    "Dims",
    "RnnParams",
    "ForwardTrace",
    "forward",
    "predict",
    "init_params",
    "save_params",
    "load_params",
    "BLOCK_NAMES",
]

BLOCK_NAMES = ("a", "b", "m0", "U", "V", "W")


@dataclass(frozen=True)
class Dims:
    """Input, hidden and output sizes plus (optionally) sequence length and count."""

    X: int
    H: int
    Y: int
    T: int = 1
    S: int = 1

    def __post_init__(self):
        for name in ("X", "H", "Y", "T", "S"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ShapeError(f"dimension {name} must be a positive integer, got {value!r}")

    def block_shapes(self):
        X, H, Y = self.X, self.H, self.Y
        return {"a": (H,), "b": (Y,), "m0": (H,), "U": (H, X), "V": (H, H), "W": (Y, H)}


@dataclass
class RnnParams:
    """The six learnable blocks of the network.

    Shapes: ``a (H,)``, ``b (Y,)``, ``m0 (H,)``, ``U (H, X)``, ``V (H, H)``,
    ``W (Y, H)``.
    """

    a: np.ndarray
    b: np.ndarray
    m0: np.ndarray
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        for name in BLOCK_NAMES:
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        H, X = self.U.shape if self.U.ndim == 2 else (None, None)
        if H is None:
            raise ShapeError("U must be a 2-D array")
        Y = self.W.shape[0] if self.W.ndim == 2 else None
        expected = Dims(X, H, Y).block_shapes()
        for name in BLOCK_NAMES:
            if getattr(self, name).shape != expected[name]:
                raise ShapeError(
                    f"block {name} has shape {getattr(self, name).shape}, expected {expected[name]}"
                )
        for name in BLOCK_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"parameter block {name} contains non-finite values")

    @property
    def dims(self):
        return Dims(X=self.U.shape[1], H=self.U.shape[0], Y=self.W.shape[0])

    @property
    def size(self):
        return sum(getattr(self, name).size for name in BLOCK_NAMES)

    def blocks(self):
        return tuple(getattr(self, name) for name in BLOCK_NAMES)

    def copy(self):
        return RnnParams(*(blk.copy() for blk in self.blocks()))

    def to_vector(self):
        """Concatenate all blocks (declared order, C order within a block)."""
        return np.concatenate([blk.ravel() for blk in self.blocks()])

    @classmethod
    def from_vector(cls, vector, dims):
        vector = np.asarray(vector, dtype=np.float64)
        shapes = dims.block_shapes()
        sizes = [int(np.prod(shapes[name])) for name in BLOCK_NAMES]
        if vector.shape != (sum(sizes),):
            raise ShapeError(f"vector of length {vector.size}, expected {sum(sizes)}")
        parts = np.split(vector, np.cumsum(sizes)[:-1])
        return cls(*(p.reshape(shapes[name]) for p, name in zip(parts, BLOCK_NAMES)))

    def equals(self, other):
        return all(
            x.shape == y.shape and x.tobytes() == y.tobytes()
            for x, y in zip(self.blocks(), other.blocks())
        )


@dataclass(frozen=True)
class ForwardTrace:
    """Pre-activations of one forward pass plus cached activation values.

    ``m`` has shape ``(S, T + 1, H)`` with ``m[:, 0] == m0``; ``n`` has shape
    ``(S, T, Y)`` and ``n[:, t - 1]`` is ``n_t``. ``phi_*`` / ``dphi_*`` hold
    ``h~`` and ``h~'``; ``psi_*`` / ``dpsi_*`` hold ``h^2~`` and its
    derivative, or ``None`` when the activation has no closed form for them.
    """

    sigma: float
    m: np.ndarray
    n: np.ndarray
    phi_m: np.ndarray
    dphi_m: np.ndarray
    psi_m: np.ndarray
    dpsi_m: np.ndarray
    phi_n: np.ndarray
    dphi_n: np.ndarray
    psi_n: np.ndarray
    dpsi_n: np.ndarray

    @property
    def has_squares(self):
        return self.psi_m is not None


def _check_inputs(params, inputs):
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3:
        raise ShapeError(f"inputs must have shape (S, T, X), got {inputs.shape}")
    if inputs.shape[2] != params.U.shape[1]:
        raise ShapeError(f"inputs have X={inputs.shape[2]} but U expects X={params.U.shape[1]}")
    if inputs.shape[1] < 1 or inputs.shape[0] < 1:
        raise ShapeError("inputs must contain at least one sequence of length >= 1")
    return inputs


def _squares(act, x, sigma):
    try:
        return act.diffused_sq(x, sigma), act.diffused_sq_deriv(x, sigma)
    except UnsupportedOperationError:
        return None, None


def _raise_nonfinite(arr, step, what):
    bad = ~np.all(np.isfinite(arr.reshape(arr.shape[0], -1)), axis=1)
    seq = int(np.flatnonzero(bad)[0])
    raise NumericError(f"non-finite {what} in forward pass", {"sequence": seq, "step": step})


def forward(params, inputs, act, sigma):
    """Run the smoothed recurrence over a batch of sequences.

    Parameters
    ----------
    params : RnnParams
    inputs : ndarray of shape (S, T, X)
    act : DiffusedActivation
    sigma : float
        Smoothing bandwidth; 0 gives the plain network.

    Returns
    -------
    ForwardTrace
    """
    inputs = _check_inputs(params, inputs)
    S, T, _ = inputs.shape
    H = params.a.shape[0]

    m = np.empty((S, T + 1, H))
    phi_m = np.empty((S, T + 1, H))
    m[:, 0] = params.m0
    phi_m[:, 0] = act.diffused(params.m0, sigma)
    # overflow is detected explicitly below and reported with its location
    with np.errstate(over="ignore", invalid="ignore"):
        drive = inputs @ params.U.T + params.a
        for t in range(1, T + 1):
            m[:, t] = drive[:, t - 1] + phi_m[:, t - 1] @ params.V.T
            if not np.all(np.isfinite(m[:, t])):
                _raise_nonfinite(m[:, t], t, "hidden pre-activation")
            phi_m[:, t] = act.diffused(m[:, t], sigma)
        n = phi_m[:, 1:] @ params.W.T + params.b
    if not np.all(np.isfinite(n)):
        steps = np.flatnonzero(~np.all(np.isfinite(n), axis=(0, 2)))
        _raise_nonfinite(n[:, steps[0]], int(steps[0]) + 1, "output pre-activation")

    psi_m, dpsi_m = _squares(act, m, sigma)
    psi_n, dpsi_n = _squares(act, n, sigma)
    return ForwardTrace(
        sigma=float(sigma),
        m=m,
        n=n,
        phi_m=phi_m,
        dphi_m=act.diffused_deriv(m, sigma),
        psi_m=psi_m,
        dpsi_m=dpsi_m,
        phi_n=act.diffused(n, sigma),
        dphi_n=act.diffused_deriv(n, sigma),
        psi_n=psi_n,
        dpsi_n=dpsi_n,
    )


def predict(params, inputs, act):
    """Outputs ``h(n_t)`` of the unsmoothed network, shape ``(S, T, Y)``."""
    inputs = _check_inputs(params, inputs)
    S, T, _ = inputs.shape
    state = np.broadcast_to(act.original(params.m0), (S, params.a.shape[0]))
    drive = inputs @ params.U.T + params.a
    outputs = np.empty((S, T, params.b.shape[0]))
    for t in range(T):
        m_t = drive[:, t] + state @ params.V.T
        if not np.all(np.isfinite(m_t)):
            _raise_nonfinite(m_t, t + 1, "hidden pre-activation")
        state = act.original(m_t)
        outputs[:, t] = act.original(state @ params.W.T + params.b)
    return outputs


def init_params(dims, scheme="uniform", scale=0.1, seed=0):
    """Initial parameters.

    ``scheme`` is ``"zeros"``, ``"uniform"`` (entries U[-scale, scale]) or
    ``"gaussian"`` (entries N(0, scale^2)). Blocks are drawn in declared order
    from one generator, so the result depends only on ``(dims, scheme, scale, seed)``.
    """
    shapes = dims.block_shapes()
    if scheme == "zeros":
        return RnnParams(*(np.zeros(shapes[name]) for name in BLOCK_NAMES))
    rng = np.random.default_rng(seed)
    if scheme == "uniform":
        draw = lambda shape: rng.uniform(-scale, scale, size=shape)  # noqa: E731
    elif scheme == "gaussian":
        draw = lambda shape: rng.normal(0.0, scale, size=shape)  # noqa: E731
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return RnnParams(*(draw(shapes[name]) for name in BLOCK_NAMES))


# Checkpoint layout (little-endian): magic b"DRNNPARM", uint32 version,
# uint32 X, H, Y, then float64 blocks a, b, m0, U, V, W in C order.
_PARAM_MAGIC = b"DRNNPARM"
_PARAM_VERSION = 1
_PARAM_HEADER = struct.Struct("<8sIIII")


def save_params(params, path):
    d = params.dims
    with open(path, "wb") as fh:
        fh.write(_PARAM_HEADER.pack(_PARAM_MAGIC, _PARAM_VERSION, d.X, d.H, d.Y))
        fh.write(params.to_vector().astype("<f8").tobytes())


def load_params(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PARAM_HEADER.size:
        raise DataFormatError(f"{path}: file too short for a checkpoint header")
    magic, version, X, H, Y = _PARAM_HEADER.unpack_from(raw)
    if magic != _PARAM_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != _PARAM_VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, expected {_PARAM_VERSION}")
    dims = Dims(X, H, Y)
    n = sum(int(np.prod(s)) for s in dims.block_shapes().values())
    if len(raw) != _PARAM_HEADER.size + 8 * n:
        raise DataFormatError(f"{path}: expected {n} parameters, file size disagrees")
    vector = np.frombuffer(raw, dtype="<f8", offset=_PARAM_HEADER.size).astype(np.float64)
    return RnnParams.from_vector(vector, dims)
