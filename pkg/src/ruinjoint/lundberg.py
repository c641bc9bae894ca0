"""Root of the generalized Lundberg fundamental equation.

For discount rate ``delta > 0`` and claim-count weight ``r`` in (0, 1] the
function ``f(s) = D*s**2 + c*s - (lam + delta) + lam*r*phat(s)`` is negative
at 0, strictly increasing on the positive axis, and grows without bound, so
it has exactly one positive zero.  The solver brackets it and polishes with
safeguarded Newton steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError, NoConvergence
from .model import ClaimDistribution, ModelParams

__all__ = ["LundbergRoot", "lundberg_f", "lundberg_f_prime", "solve_rho"]


@dataclass(frozen=True)
class LundbergRoot:
    """Positive root of the fundamental equation for one ``(r, delta)`` pair."""

    delta: float
    r: float
    rho: float
    residual: float


def _check_r_delta(r: float, delta: float):
    if not (0.0 < r <= 1.0):
        raise DomainError(f"r must lie in (0, 1], got {r}")
    if not (delta > 0.0 and math.isfinite(delta)):
        raise DomainError(f"delta must be > 0, got {delta}")


def lundberg_f(model: ModelParams, dist: ClaimDistribution, r: float,
               delta: float, s: float) -> float:
    """Evaluate ``D*s**2 + c*s - (lam + delta) + lam*r*phat(s)``."""
    _check_r_delta(r, delta)
    if s < 0:
        raise DomainError(f"s must be >= 0, got {s}")
    return (model.D * s * s + model.c * s - (model.lam + delta)
            + model.lam * r * dist.laplace(s))


def lundberg_f_prime(model: ModelParams, dist: ClaimDistribution, r: float,
                     delta: float, s: float) -> float:
    """Derivative of :func:`lundberg_f` in ``s`` (strictly positive for s > 0)."""
    _check_r_delta(r, delta)
    if s < 0:
        raise DomainError(f"s must be >= 0, got {s}")
    return 2.0 * model.D * s + model.c + model.lam * r * dist.laplace_deriv(s)


def solve_rho(model: ModelParams, dist: ClaimDistribution, r: float,
              delta: float, tol: float | None = None) -> LundbergRoot:
    """Find the unique positive root of the fundamental equation.

    Args:
        tol: residual target ``|f(rho)| <= tol``; defaults to
            ``1e-13 * max(1, lam + delta)``.

    Returns:
        :class:`LundbergRoot` with the root and the achieved residual.
    """
    _check_r_delta(r, delta)
    if tol is None:
        tol = 1e-13 * max(1.0, model.lam + delta)

    def f(s):
        return (model.D * s * s + model.c * s - (model.lam + delta)
                + model.lam * r * dist.laplace(s))

    def fp(s):
        return 2.0 * model.D * s + model.c + model.lam * r * dist.laplace_deriv(s)

    lo, f_lo = 0.0, f(0.0)  # = lam*(r-1) - delta < 0
    hi = max(1.0, (model.lam + delta) / model.c)
    f_hi = f(hi)
    doublings = 0
    while f_hi <= 0.0:
        hi *= 2.0
        f_hi = f(hi)
        doublings += 1
        if doublings > 200:  # pragma: no cover - f grows quadratically
            raise NoConvergence("failed to bracket the Lundberg root")

    x = 0.5 * (lo + hi)
    fx = f(x)
    for _ in range(200):
        if abs(fx) <= tol:
            return LundbergRoot(delta=delta, r=r, rho=x, residual=abs(fx))
        if fx > 0.0:
            hi = x
        else:
            lo = x
        step_ok = False
        d = fp(x)
        if d > 0.0:
            x_new = x - fx / d
            if lo < x_new < hi:
                x, fx = x_new, f(x_new)
                step_ok = True
        if not step_ok:  # Newton left the bracket: bisect instead
            x = 0.5 * (lo + hi)
            fx = f(x)
    raise NoConvergence(  # pragma: no cover - monotone f converges
        f"Lundberg root refinement stalled at residual {abs(fx):.3e}"
    )
