"""Parameter containers, Adam, gradient clipping and the checkpoint format."""

from __future__ import annotations

import struct
from typing import Iterator

import numpy as np

from .tensor import ContractError, Tensor

CHECKPOINT_MAGIC = b"TTMCKPT\0"
CHECKPOINT_VERSION = 1
BUFFER_PREFIX = "@"


class ParameterSet:
    """Named trainable tensors iterated in lexicographic order.

    Adam moments live alongside the parameters so that an optimizer step is a
    pure function of the set and its gradients.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        # non-trainable arrays (normalization statistics, thresholds)
        self.buffers: dict[str, np.ndarray] = {}
        self.step = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def add(self, path: str, value) -> Tensor:
        if path in self._params:
            raise ContractError(f"duplicate parameter name {path!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=path)
        self._params[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for k in self.names():
            yield k, self._params[k]

    def values(self) -> list[Tensor]:
        return [self._params[k] for k in self.names()]

    def count(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        out = {k: t.data.copy() for k, t in self.items()}
        out.update({BUFFER_PREFIX + k: np.array(v, dtype=np.float64) for k, v in sorted(self.buffers.items())})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        state = dict(state)
        bufs = {k[len(BUFFER_PREFIX):]: state.pop(k) for k in list(state) if k.startswith(BUFFER_PREFIX)}
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ContractError(
                f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for k, v in state.items():
            if v.shape != self._params[k].shape:
                raise ContractError(
                    f"shape mismatch for {k}: {v.shape} vs {self._params[k].shape}"
                )
            self._params[k].data = np.array(v, dtype=np.float64)
        self.buffers = {k: np.array(v, dtype=np.float64) for k, v in bufs.items()}


def grad_norm(params: ParameterSet) -> float:
    total = 0.0
    for _, t in params.items():
        if t.grad is not None:
            total += float(np.sum(t.grad * t.grad))
    return float(np.sqrt(total))


def clip_grad_norm(params: ParameterSet, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    norm = grad_norm(params)
    if norm > max_norm:
        scale = max_norm / norm
        for _, t in params.items():
            if t.grad is not None:
                t.grad *= scale
    return norm


def adam_step(
    params: ParameterSet,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    allow_missing: bool = False,
) -> None:
    """One bias-corrected Adam update, then zero the gradients.

    A parameter without a gradient is an error naming it, unless
    ``allow_missing`` is set, in which case it is treated as a zero gradient.
    """
    missing = [k for k, t in params.items() if t.grad is None]
    if missing and not allow_missing:
        raise ContractError(f"no gradient for parameters: {', '.join(missing)}")
    params.step += 1
    b1c = 1.0 - beta1**params.step
    b2c = 1.0 - beta2**params.step
    for k, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        m = params._m.get(k)
        if m is None:
            m = np.zeros_like(t.data)
            v = np.zeros_like(t.data)
        else:
            v = params._v[k]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        params._m[k], params._v[k] = m, v
        t.data = t.data - lr * (m / b1c) / (np.sqrt(v / b2c) + eps)
    params.zero_grad()


# -- checkpoint I/O -----------------------------------------------------------
#
# layout (little-endian):
#   magic[8] version:u32 step:u64 count:u32
#   per parameter: name_len:u16 name:utf8 ndim:u8 dims:u32*ndim data:f64*prod(dims)
# trainable parameters come first in lexicographic order, then buffers whose
# names carry a leading "@".


def save_checkpoint(params: ParameterSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params))


def checkpoint_bytes(params: ParameterSet) -> bytes:
    state = params.state()
    parts = [CHECKPOINT_MAGIC, struct.pack("<IQI", CHECKPOINT_VERSION, params.step, len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    return b"".join(parts)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], int]:
    """Return ``(state, step)`` from a checkpoint file."""
    with open(path, "rb") as fh:
        buf = fh.read()
    return parse_checkpoint(buf)


def parse_checkpoint(buf: bytes) -> tuple[dict[str, np.ndarray], int]:
    if buf[:8] != CHECKPOINT_MAGIC:
        raise ContractError("not a checkpoint file (bad magic)")
    version, step, count = struct.unpack_from("<IQI", buf, 8)
    if version != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    off = 8 + struct.calcsize("<IQI")
    state = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + n].decode("utf-8")
        off += n
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
        off += 8 * size
    if off != len(buf):
        raise ContractError("trailing bytes after checkpoint payload")
    return state, step


def load_checkpoint(params: ParameterSet, path) -> None:
    state, step = read_checkpoint(path)
    params.load_state(state)
    params.step = step
