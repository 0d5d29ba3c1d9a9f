"""Independent finite-difference oracle for backward rules.

The checker never trusts the tape: analytic gradients are compared against
central differences of the forward function alone.  Parameters are perturbed
in place, so ``f`` must read the same Tensor objects passed in ``params``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DeterminismError, ValidationError
from .tensor import Tape, Tensor


@dataclass
class ParamCheck:
    name: str
    components_checked: int
    worst_rel_err: float
    worst_component: tuple[int, ...] | None
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    step: float
    entries: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def worst_rel_err(self) -> float:
        return max((e.worst_rel_err for e in self.entries), default=0.0)

    def failures(self) -> list[str]:
        return [e.name for e in self.entries if not e.passed]

    def format_lines(self) -> list[str]:
        lines = []
        for e in sorted(self.entries, key=lambda e: e.name):
            status = "ok  " if e.passed else "FAIL"
            lines.append(
                f"{status} {e.name}: worst rel err {e.worst_rel_err:.3e}"
                f" over {e.components_checked} components"
            )
        verdict = "PASS" if self.passed else "FAIL: " + ", ".join(self.failures())
        lines.append(f"gradcheck {verdict} (tol {self.tolerance:g}, worst {self.worst_rel_err:.3e})")
        return lines


def _eval_scalar(f) -> float:
    out = f()
    if not isinstance(out, Tensor):
        raise ValidationError("grad_check function must return a Tensor scalar")
    return out.item()


def grad_check(
    f,
    params: dict[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-6,
    max_samples_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    grad_transform=None,
) -> GradCheckReport:
    """Compare tape gradients of ``f()`` against central finite differences.

    For each sampled component, the reported error is
    ``|analytic - fd| / max(1, |fd|)``; the check passes iff every error is
    below ``tol``.  ``grad_transform`` (name, grad) -> grad exists so tests
    can corrupt the analytic side and confirm the oracle catches it.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ValidationError(f"grad_check requires float64 parameters; {name} is {p.dtype}")

    base = _eval_scalar(f)
    again = _eval_scalar(f)
    if base != again:  # bitwise: any RNG or state dependence is a bug here
        raise DeterminismError(f"two forward passes differ: {base!r} vs {again!r}")

    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = {name: tape.gradient(p) for name, p in params.items()}
    if grad_transform is not None:
        analytic = {name: grad_transform(name, g) for name, g in analytic.items()}

    if rng is None:
        rng = np.random.default_rng(0)

    report = GradCheckReport(tolerance=tol, step=h)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_samples_per_param is not None and n > max_samples_per_param:
            indices = np.sort(rng.choice(n, size=max_samples_per_param, replace=False))
        else:
            indices = np.arange(n)
        worst = 0.0
        worst_at = None
        for idx in indices:
            saved = flat[idx]
            flat[idx] = saved + h
            up = _eval_scalar(f)
            flat[idx] = saved - h
            down = _eval_scalar(f)
            flat[idx] = saved
            fd = (up - down) / (2.0 * h)
            an = analytic[name].reshape(-1)[idx]
            rel = abs(an - fd) / max(1.0, abs(fd))
            if rel > worst:
                worst = rel
                worst_at = np.unravel_index(int(idx), p.shape)
        report.entries.append(
            ParamCheck(
                name=name,
                components_checked=len(indices),
                worst_rel_err=worst,
                worst_component=worst_at,
                passed=worst < tol,
            )
        )
    return report
