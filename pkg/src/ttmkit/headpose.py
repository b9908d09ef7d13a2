"""Head orientation branch: features -> 6D rotation -> rotation matrix -> angles.

Euler angles follow the ZYX intrinsic convention throughout:
``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, ContractError, DimensionError, SingularityError
from .numkit import ParameterSet, Tensor, as_tensor, cross3, gelu, stack

GS_EPS = 1e-8
GIMBAL_TOL = 1e-9


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if np.any(self.std <= 0):
            raise ConfigError("normalization std must be positive in every channel")


def fit_norm_stats(features: np.ndarray, present: np.ndarray | None = None,
                   min_std: float = 1e-6) -> NormStats:
    """Per-channel mean/std over all frames (only present frames if a mask is given)."""
    x = np.asarray(features, dtype=np.float64).reshape(-1, features.shape[-1])
    if present is not None:
        x = x[np.asarray(present, dtype=bool).reshape(-1)]
    return NormStats(x.mean(axis=0), np.maximum(x.std(axis=0), min_std))


def normalize_head(raw, stats: NormStats):
    if np.any(stats.std <= 0):
        raise ConfigError("normalization std must be positive in every channel")
    if isinstance(raw, Tensor):
        return (raw - stats.mean) * (1.0 / stats.std)
    return (np.asarray(raw, dtype=np.float64) - stats.mean) / stats.std


def head_to_6d(f: Tensor, weight: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """Affine map N_f -> 6, split into (a1, a2)."""
    f = as_tensor(f)
    if f.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"head feature length {f.shape[-1]} does not match weight rows {weight.shape[0]}"
        )
    if weight.shape[1] != 6:
        raise DimensionError(f"6D projection must output 6 values, got {weight.shape[1]}")
    a = f @ weight + bias
    return a[..., 0:3], a[..., 3:6]


def _norm3(v: Tensor) -> Tensor:
    return (v * v).sum(axis=-1, keepdims=True).sqrt()


def gram_schmidt_6d(a1, a2, eps: float = GS_EPS) -> Tensor:
    """Orthonormalize two 3-vectors into a rotation matrix with columns b1, b2, b3.

    Works on any leading batch shape; returns (..., 3, 3).
    """
    a1, a2 = as_tensor(a1), as_tensor(a2)
    if a1.shape[-1] != 3 or a2.shape[-1] != 3:
        raise DimensionError(f"6D halves must be 3-vectors, got {a1.shape} and {a2.shape}")
    n1 = _norm3(a1)
    if np.any(n1.data <= eps):
        raise SingularityError(f"a1 collapsed: |a1| = {n1.data.min():.3e} <= {eps}")
    b1 = a1 / n1
    u2 = a2 - (b1 * a2).sum(axis=-1, keepdims=True) * b1
    n2 = _norm3(u2)
    if np.any(n2.data <= eps):
        raise SingularityError(
            f"a2 collapsed onto a1: |u2| = {n2.data.min():.3e} <= {eps}"
        )
    b2 = u2 / n2
    b3 = cross3(b1, b2)
    return stack([b1, b2, b3], axis=-1)


def check_rotation(R: np.ndarray, tol: float = 1e-6) -> None:
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise DimensionError(f"rotation must be 3x3, got {R.shape}")
    eye = np.broadcast_to(np.eye(3), R.shape)
    err = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max()
    if err > tol or np.abs(np.linalg.det(R) - 1.0).max() > tol:
        raise ContractError(f"matrix is not a proper rotation (orthogonality error {err:.2e})")


def euler_to_rotation(angles) -> np.ndarray:
    """(..., 3) yaw/pitch/roll -> (..., 3, 3) rotation ``Rz @ Ry @ Rx``."""
    a = np.asarray(angles, dtype=np.float64)
    ca, sa = np.cos(a[..., 0]), np.sin(a[..., 0])
    cb, sb = np.cos(a[..., 1]), np.sin(a[..., 1])
    cg, sg = np.cos(a[..., 2]), np.sin(a[..., 2])
    R = np.empty(a.shape[:-1] + (3, 3))
    R[..., 0, 0] = ca * cb
    R[..., 0, 1] = ca * sb * sg - sa * cg
    R[..., 0, 2] = ca * sb * cg + sa * sg
    R[..., 1, 0] = sa * cb
    R[..., 1, 1] = sa * sb * sg + ca * cg
    R[..., 1, 2] = sa * sb * cg - ca * sg
    R[..., 2, 0] = -sb
    R[..., 2, 1] = cb * sg
    R[..., 2, 2] = cb * cg
    return R


def euler_from_rotation(R, check: bool = True) -> np.ndarray:
    """Inverse of :func:`euler_to_rotation`, returning (..., 3) yaw/pitch/roll.

    At gimbal lock (|R[2,0]| > 1 - 1e-9) roll is reported as 0 and the
    remaining rotation about z is folded into yaw.
    """
    R = np.asarray(R.data if isinstance(R, Tensor) else R, dtype=np.float64)
    if check:
        check_rotation(R)
    s = np.clip(-R[..., 2, 0], -1.0, 1.0)
    pitch = np.arcsin(s)
    locked = np.abs(R[..., 2, 0]) > 1.0 - GIMBAL_TOL
    yaw = np.where(locked, np.arctan2(-R[..., 0, 1], R[..., 1, 1]), np.arctan2(R[..., 1, 0], R[..., 0, 0]))
    roll = np.where(locked, 0.0, np.arctan2(R[..., 2, 1], R[..., 2, 2]))
    pitch = np.where(locked, np.sign(s) * np.pi / 2, pitch)
    # canonical range (-pi, pi] for yaw and roll
    yaw = np.where(yaw <= -np.pi, yaw + 2 * np.pi, yaw)
    roll = np.where(roll <= -np.pi, roll + 2 * np.pi, roll)
    return np.stack([yaw, pitch, roll], axis=-1)


def regress_angles(B: Tensor, w_out: Tensor, b_out: Tensor) -> Tensor:
    """theta = W_out . vec(B) + b_out, with vec the row-major flattening of B.

    ``w_out`` is stored transposed, shape (9, 3), so the product is a plain
    right-multiplication of the flattened batch.
    """
    B = as_tensor(B)
    if B.shape[-2:] != (3, 3):
        raise DimensionError(f"expected (..., 3, 3) rotation, got {B.shape}")
    if w_out.shape != (9, 3) or b_out.shape != (3,):
        raise DimensionError(f"W_out must be (9, 3) and b_out (3,), got {w_out.shape}, {b_out.shape}")
    return B.reshape(*B.shape[:-2], 9) @ w_out + b_out


class HeadPoseBranch:
    """Trainable head branch producing z_h = (yaw, pitch, roll) per frame.

    The image backbone is replaced by a 2-layer perceptron over synthetic
    head-feature vectors.
    """

    def __init__(self, params: ParameterSet, n_feat: int, hidden: int,
                 rng: np.random.Generator, prefix: str = "head"):
        self.params, self.prefix, self.n_feat = params, prefix, n_feat
        nn.init_linear(params, f"{prefix}.mlp1", n_feat, hidden, rng)
        nn.init_linear(params, f"{prefix}.mlp2", hidden, n_feat, rng)
        # start near the identity rotation so Gram-Schmidt is well conditioned
        params.add(f"{prefix}.to6d.weight", rng.normal(0.0, 0.1 / np.sqrt(n_feat), size=(n_feat, 6)))
        params.add(f"{prefix}.to6d.bias", np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]))
        params.add(f"{prefix}.out.weight", rng.normal(0.0, 1.0 / 3.0, size=(9, 3)))
        params.add(f"{prefix}.out.bias", np.zeros(3))

    def features(self, x: Tensor) -> Tensor:
        p = self.prefix
        return nn.linear(self.params, f"{p}.mlp2", gelu(nn.linear(self.params, f"{p}.mlp1", x)))

    def rotation(self, x: Tensor) -> Tensor:
        p = self.params
        a1, a2 = head_to_6d(self.features(x), p[f"{self.prefix}.to6d.weight"], p[f"{self.prefix}.to6d.bias"])
        return gram_schmidt_6d(a1, a2)

    def __call__(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.n_feat:
            raise DimensionError(f"head features have length {x.shape[-1]}, expected {self.n_feat}")
        p = self.params
        return regress_angles(self.rotation(x), p[f"{self.prefix}.out.weight"], p[f"{self.prefix}.out.bias"])


def pose_rows(vectors: np.ndarray) -> np.ndarray:
    """For the ``pose`` command: (n, 6) inputs -> (n, 6 + 9 + 3) rows."""
    v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if v.shape[-1] != 6:
        raise DimensionError(f"each line needs six floats, got {v.shape[-1]}")
    R = gram_schmidt_6d(v[:, :3], v[:, 3:]).data
    ang = euler_from_rotation(R)
    return np.concatenate([v, R.reshape(len(v), 9), ang], axis=1)


__all__ = [
    "HeadPoseBranch",
    "NormStats",
    "check_rotation",
    "euler_from_rotation",
    "euler_to_rotation",
    "fit_norm_stats",
    "gram_schmidt_6d",
    "head_to_6d",
    "normalize_head",
    "pose_rows",
    "regress_angles",
]
