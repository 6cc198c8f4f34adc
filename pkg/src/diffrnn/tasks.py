"""Sequence datasets: the adding problem generator and a binary file format.

File layout (all integers and floats little-endian)::

    offset  size  field
    0       8     magic  b"DRNNDATA"
    8       4     uint32 format version
    12      16    task name, ASCII, NUL padded
    28      4     uint32 S (sequences)
    32      4     uint32 T (steps)
    36      4     uint32 X (input dim)
    40      4     uint32 Y (output dim)
    44      8     int64  seed (-1 when unknown)
    52      1     uint8  supervision (0 = every step, 1 = last step only)
    53      3     padding
    56      ...   float64 inputs, shape (S, T, X), C order
    ...     ...   float64 targets, shape (S, T, Y), C order
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataFormatError, ShapeError, VersionMismatchError

__all__ = [
    "SequenceDataset",
    "gen_adding",
    "split",
    "save_dataset",
    "load_dataset",
    "FORMAT_VERSION",
]

MAGIC = b"DRNNDATA"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sI16sIIIIqB3x")
_SUPERVISION_CODES = {"all": 0, "last": 1}


@dataclass
class SequenceDataset:
    """``S`` input/target sequence pairs of length ``T``.

    ``inputs`` has shape ``(S, T, X)`` and ``targets`` ``(S, T, Y)``.
    ``supervision`` selects which steps enter the fit term of the cost:
    ``"all"`` (every step) or ``"last"`` (final step only).
    """

    inputs: np.ndarray
    targets: np.ndarray
    task: str = "custom"
    seed: int = -1
    supervision: str = "all"
    markers: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.targets = np.ascontiguousarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 3 or self.targets.ndim != 3:
            raise ShapeError("inputs and targets must both be 3-D arrays (S, T, dim)")
        if self.inputs.shape[:2] != self.targets.shape[:2]:
            raise ShapeError(
                f"inputs {self.inputs.shape} and targets {self.targets.shape} disagree on (S, T)"
            )
        if self.supervision not in _SUPERVISION_CODES:
            raise ValueError(f"supervision must be 'all' or 'last', got {self.supervision!r}")

    @property
    def n_sequences(self):
        return self.inputs.shape[0]

    @property
    def length(self):
        return self.inputs.shape[1]

    @property
    def input_dim(self):
        return self.inputs.shape[2]

    @property
    def output_dim(self):
        return self.targets.shape[2]

    @property
    def step_weights(self):
        """Per-step 0/1 weights applied to the fit term."""
        w = np.ones(self.length)
        if self.supervision == "last":
            w[:-1] = 0.0
        return w

    def __len__(self):
        return self.n_sequences

    def subset(self, index):
        index = np.asarray(index, dtype=np.intp)
        return SequenceDataset(
            self.inputs[index],
            self.targets[index],
            task=self.task,
            seed=self.seed,
            supervision=self.supervision,
            markers=None if self.markers is None else self.markers[index],
        )

    def equals(self, other):
        """Bit-exact equality of data and metadata."""
        return (
            self.task == other.task
            and self.seed == other.seed
            and self.supervision == other.supervision
            and self.inputs.shape == other.inputs.shape
            and self.targets.shape == other.targets.shape
            and self.inputs.tobytes() == other.inputs.tobytes()
            and self.targets.tobytes() == other.targets.tobytes()
        )


def gen_adding(n_sequences, length=10, seed=0, *, supervision="all", zero_values=False):
    """Generate the adding problem.

    Channel 0 holds values drawn i.i.d. from U[-0.5, 0.5]; channel 1 is a
    binary marker that is 1 at exactly two distinct positions. The target is
    the sum of the two marked values, repeated at every step.

    ``zero_values`` forces the value channel to 0 (a hook for tests).
    """
    n_sequences = int(n_sequences)
    length = int(length)
    if length < 2:
        raise ValueError(f"the adding problem needs length >= 2, got {length}")
    if n_sequences < 1:
        raise ValueError(f"n_sequences must be positive, got {n_sequences}")
    rng = np.random.default_rng(seed)
    values = rng.uniform(-0.5, 0.5, size=(n_sequences, length))
    if zero_values:
        values[:] = 0.0
    # two distinct positions per sequence, uniform without replacement
    markers = np.argsort(rng.random((n_sequences, length)), axis=1)[:, :2]
    markers.sort(axis=1)
    flags = np.zeros((n_sequences, length))
    rows = np.arange(n_sequences)[:, None]
    flags[rows, markers] = 1.0
    total = values[rows, markers].sum(axis=1)

    inputs = np.stack([values, flags], axis=2)
    targets = np.repeat(total[:, None, None], length, axis=1)
    return SequenceDataset(
        inputs,
        targets,
        task="adding",
        seed=int(seed) if seed is not None else -1,
        supervision=supervision,
        markers=markers,
    )


def split(dataset, n_train, n_test, seed=0):
    """Seeded disjoint train/test split."""
    n_train, n_test = int(n_train), int(n_test)
    if n_train < 0 or n_test < 0 or n_train + n_test > len(dataset):
        raise ValueError(
            f"cannot split {len(dataset)} sequences into {n_train} train + {n_test} test"
        )
    perm = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(perm[:n_train]), dataset.subset(perm[n_train : n_train + n_test])


def save_dataset(dataset, path):
    task = dataset.task.encode("ascii")
    if len(task) > 16:
        raise ValueError("task name longer than 16 bytes")
    S, T, X = dataset.inputs.shape
    Y = dataset.targets.shape[2]
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        task,
        S,
        T,
        X,
        Y,
        int(dataset.seed),
        _SUPERVISION_CODES[dataset.supervision],
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dataset.inputs.astype("<f8").tobytes(order="C"))
        fh.write(dataset.targets.astype("<f8").tobytes(order="C"))


def load_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: file too short for a dataset header")
    magic, version, task, S, T, X, Y, seed, sup = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {version}, this build reads version {FORMAT_VERSION}"
        )
    codes = {v: k for k, v in _SUPERVISION_CODES.items()}
    if sup not in codes:
        raise DataFormatError(f"{path}: unknown supervision code {sup}")
    n_in, n_out = S * T * X, S * T * Y
    expected = _HEADER.size + 8 * (n_in + n_out)
    if len(raw) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    inputs = body[:n_in].reshape(S, T, X).astype(np.float64)
    targets = body[n_in:].reshape(S, T, Y).astype(np.float64)
    return SequenceDataset(
        inputs,
        targets,
        task=task.rstrip(b"\0").decode("ascii"),
        seed=seed,
        supervision=codes[sup],
    )
