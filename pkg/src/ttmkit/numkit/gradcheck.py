"""Central finite-difference checks against reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    checked: int
    per_tensor: dict[str, float] = field(default_factory=dict)

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


# Entries whose true gradient is exactly zero (an attention key bias, say)
# leave only round-off in the numeric estimate, around 1e-10 for O(1) losses.
# Below the floor the check is therefore absolute, at floor * tolerance.
REL_FLOOR = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def finite_difference_check(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor] | dict[str, Tensor],
    eps: float = 1e-5,
    floor: float = REL_FLOOR,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare backward() gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` must rebuild the graph from the current tensor values on every
    call. With ``max_entries`` set, that many entries per tensor are sampled
    instead of checking all of them.
    """
    if not isinstance(tensors, dict):
        tensors = {t.name or f"t{i}": t for i, t in enumerate(tensors)}
    for t in tensors.values():
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}
    for t in tensors.values():
        t.grad = None

    rng = rng or np.random.default_rng(0)
    worst, worst_name, checked = 0.0, "", 0
    per_tensor = {}
    with no_grad():
        for name, t in tensors.items():
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            errs = []
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                num = (up - down) / (2 * eps)
                errs.append(relative_error(analytic[name].reshape(-1)[i], num, floor))
            checked += len(idx)
            e = float(np.max(errs)) if errs else 0.0
            per_tensor[name] = e
            if e > worst:
                worst, worst_name = e, name
    return GradCheckReport(worst, worst_name, checked, per_tensor)
