"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_probes: int
    worst: str = ""
    failure: str | None = None
    per_input: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.failure is None and self.max_rel_error < self.tol

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.failure})" if self.failure else ""
        return (f"{status} max_rel_err={self.max_rel_error:.3e} tol={self.tol:.0e} "
                f"probes={self.n_probes} worst={self.worst}{extra}")


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from dominating."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    f: Callable[[], Tensor],
    inputs: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_probes_per_input: int | None = None,
    seed: int = 0,
    floor: float = 1e-5,
) -> GradCheckReport:
    """Compare tape gradients of the scalar ``f()`` against central differences.

    ``f`` takes no arguments and reads the ``inputs`` tensors, which are
    perturbed in place while probing and restored afterwards. Inputs should be
    float64; the check is meaningless at single precision.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None

    with Tape() as tape:
        out = f()
    if out.size != 1:
        return GradCheckReport(np.inf, tol, 0, failure=f"output shape {out.shape} is not scalar")
    if not np.isfinite(out.data).all():
        return GradCheckReport(np.inf, tol, 0, failure="non-finite output at the base point")
    tape.backward(out)

    rng = np.random.default_rng(seed)
    worst_err, worst_name, n_probes = 0.0, "", 0
    per_input: dict[str, float] = {}
    for i, t in enumerate(inputs):
        name = t.name or f"input{i}"
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_probes_per_input is not None and flat.size > max_probes_per_input:
            idx = rng.choice(flat.size, size=max_probes_per_input, replace=False)
        a_vals, n_vals = [], []
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            fp = float(f().data)
            flat[j] = orig - eps
            fm = float(f().data)
            flat[j] = orig
            n_probes += 1
            if not (np.isfinite(fp) and np.isfinite(fm)):
                return GradCheckReport(np.inf, tol, n_probes, worst=f"{name}[{j}]",
                                       failure="non-finite value while probing")
            a_vals.append(analytic.reshape(-1)[j])
            n_vals.append((fp - fm) / (2 * eps))
        err = relative_error(np.asarray(a_vals), np.asarray(n_vals), floor)
        k = int(np.argmax(err)) if err.size else 0
        per_input[name] = float(err.max()) if err.size else 0.0
        if err.size and err[k] > worst_err:
            worst_err, worst_name = float(err[k]), f"{name}[{idx[k]}]"
    for t in inputs:
        t.grad = None
    return GradCheckReport(worst_err, tol, n_probes, worst_name, per_input=per_input)
