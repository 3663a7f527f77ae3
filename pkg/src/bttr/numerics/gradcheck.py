"""Finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .tensor import Tensor, _topo_order


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    tolerance: float
    flagged: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return bool(self.errors) and self.max_error <= self.tolerance

    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.errors.items() if v > self.tolerance}


# Central differences in float64 with h = 1e-4 resolve gradients to about
# eps * |loss| / h ~ 1e-12; anything under this floor counts as exactly zero.
ZERO_FLOOR = 1e-8


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| / max(max|a|, max|n|), the worst entry scaled by the tensor's magnitude."""
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    if scale < ZERO_FLOOR:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _near_kink(loss: Tensor, h: float) -> bool:
    return any(node.meta.get("kink", np.inf) < 2 * h for node in _topo_order(loss))


def gradcheck(fn: Callable[[Mapping[str, Tensor]], Tensor],
              inputs: Mapping[str, Tensor],
              tolerance: float = 1e-3,
              h: float = 1e-4,
              sampler: Optional[Callable[[np.random.Generator], Mapping[str, Tensor]]] = None,
              rng: Optional[np.random.Generator] = None,
              max_resample: int = 20,
              max_entries: Optional[int] = None) -> GradcheckReport:
    """Compare backward() gradients with central differences.

    ``fn`` maps the named leaf tensors to a scalar loss.  If the graph evaluates
    a ReLU within ``2 h`` of its kink, the point is flagged and redrawn, from
    ``sampler`` when given, otherwise by jittering the inputs.  With
    ``max_entries`` only that many randomly chosen coordinates per tensor are
    differenced.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    flagged = 0
    notes = []
    for _ in range(max_resample + 1):
        for t in inputs.values():
            t.grad = None
        loss = fn(inputs)
        if not _near_kink(loss, h):
            break
        flagged += 1
        notes.append("sample point within finite-difference reach of a ReLU kink; resampled")
        if sampler is not None:
            inputs = sampler(rng)
        else:
            for t in inputs.values():
                t.data = t.data + rng.normal(0, 0.05, size=t.shape).astype(t.dtype)
    else:
        notes.append("no kink-free sample point found")

    loss.backward()
    errors = {}
    for name, t in inputs.items():
        if not t.requires_grad:
            continue
        t.data = np.ascontiguousarray(t.data)
        analytic = np.zeros_like(t.data) if t.grad is None else np.asarray(t.grad).copy()
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.zeros(idx.size, dtype=np.float64)
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(inputs).item()
            flat[i] = orig - h
            down = fn(inputs).item()
            flat[i] = orig
            numeric[n] = (up - down) / (2 * h)
        picked = analytic.reshape(-1)[idx]
        scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
        if scale < ZERO_FLOOR:
            notes.append(f"{name}: gradient is identically zero (both sides below {ZERO_FLOOR:g})")
            errors[name] = 0.0
        else:
            errors[name] = float(np.max(np.abs(picked - numeric)) / scale)
    return GradcheckReport(errors=errors, tolerance=tolerance, flagged=flagged, notes=notes)
