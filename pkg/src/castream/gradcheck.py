"""Central finite-difference gradient verification.

The oracle is independent of the tape: it re-evaluates the target function
at perturbed leaf values and compares (f(x+eps) - f(x-eps)) / 2eps against
the tape gradient, element by element, in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError, NonFiniteError
from .tensor import GradTape, Tensor

# Below this magnitude the comparison falls back to absolute error; a pure
# relative criterion is meaningless when the true gradient is ~0.
_ABS_FLOOR = 1e-6


@dataclass
class LeafReport:
    name: str
    max_rel_err: float
    worst_index: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    leaves: dict = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        if not self.leaves:
            return 0.0
        return max(r.max_rel_err for r in self.leaves.values())

    def passed(self, tol: float) -> bool:
        return self.max_rel_err <= tol

    def summary(self) -> str:
        lines = []
        for name, r in sorted(self.leaves.items()):
            lines.append(
                f"{name}: max rel err {r.max_rel_err:.3e} at {r.worst_index} "
                f"(tape {r.analytic:.6e}, fd {r.numeric:.6e})"
            )
        return "\n".join(lines)


def _rel_err(a: float, n: float) -> float:
    diff = abs(a - n)
    denom = max(abs(a), abs(n))
    if denom < _ABS_FLOOR:
        return diff
    return diff / denom


def grad_check(f, leaves, eps: float = 1e-5, tol: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients of a scalar function against central differences.

    ``f`` takes no arguments and returns a scalar Tensor; it must close over
    the given leaves. ``leaves`` is a list of (name, Tensor) pairs or a dict.
    Perturbations mutate leaf data in place and restore it, so the leaves
    must not be shared with a concurrently running computation.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    if isinstance(leaves, dict):
        leaves = list(leaves.items())
    for name, leaf in leaves:
        if leaf.dtype != np.float64:
            raise ValueError(f"leaf {name} must be float64 for gradient checking")

    with GradTape() as tape:
        out = f()
    if not np.isfinite(out.data).all():
        raise EvaluationError("function value non-finite at the unperturbed point")
    analytic = tape.gradient(out, [leaf for _, leaf in leaves])

    report = GradCheckReport()
    for (name, leaf), a_grad in zip(leaves, analytic):
        flat = leaf.data.reshape(-1)
        a_flat = a_grad.reshape(-1)
        worst = (0.0, (0,), 0.0, 0.0)
        for i in range(flat.size):
            orig = flat[i]
            try:
                flat[i] = orig + eps
                f_plus = float(f().data)
                flat[i] = orig - eps
                f_minus = float(f().data)
            except NonFiniteError as exc:
                raise EvaluationError(
                    f"non-finite value probing leaf {name} at flat index {i} "
                    f"(x={orig!r}, eps={eps}): {exc}"
                ) from exc
            finally:
                flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise EvaluationError(
                    f"non-finite value probing leaf {name} at flat index {i} "
                    f"(x={orig!r}, eps={eps})"
                )
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = _rel_err(float(a_flat[i]), numeric)
            if err >= worst[0]:
                worst = (err, np.unravel_index(i, leaf.shape), float(a_flat[i]), numeric)
        report.leaves[name] = LeafReport(name, *worst)
    return report
