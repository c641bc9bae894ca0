"""Adaptive quadrature and series-truncation utilities.

The engine is a globally adaptive composite of a nested Gauss-Legendre pair
(10- and 21-point rules per panel) with worst-panel-first refinement.  All
nodes are interior, so integrands may be singular-but-integrable at the
endpoints; known ``1/sqrt`` endpoints are better served by the explicit
square-root substitution helpers, which cluster nodes where they are needed.

Integrands must accept a numpy array of abscissae.  They may return either
one value per node (scalar integral) or a ``(nodes, batch)`` array, in which
case the whole batch is integrated at once and refinement is driven by the
worst batch component.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import BadDecayHint, DomainError, InvalidParameter, NoConvergence

_X10, _W10 = np.polynomial.legendre.leggauss(10)
_X21, _W21 = np.polynomial.legendre.leggauss(21)


@lru_cache(maxsize=32)
def _leggauss(order: int):
    return np.polynomial.legendre.leggauss(order)

# Hard cap on live panels; hitting it means the integrand defeated the
# subdivision strategy rather than needing more budget.
_MAX_PANELS = 20000


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and truncation orders governing every integral and series.

    Attributes:
        rel_tol: relative tolerance for adaptive integrals.
        abs_tol: absolute tolerance floor.
        max_depth: maximum bisection depth per panel.
        n_max: cap on claim-count series truncation order.
        x_cutoff_mass: tail mass allowed when truncating money-axis integrals.
        t_cutoff_mass: tail mass allowed when truncating time-axis integrals.
    """

    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    max_depth: int = 64
    n_max: int = 60
    x_cutoff_mass: float = 1e-10
    t_cutoff_mass: float = 1e-10

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise InvalidParameter("tolerances must be positive")
        if self.n_max < 1:
            raise InvalidParameter("n_max must be >= 1")
        if self.max_depth < 4:
            raise InvalidParameter("max_depth must be >= 4")
        for name in ("x_cutoff_mass", "t_cutoff_mass"):
            v = getattr(self, name)
            if not (0.0 < v <= 1e-4):
                raise InvalidParameter(f"{name} must lie in (0, 1e-4]")

    def halved(self) -> "QuadratureSpec":
        """Spec with all tolerances halved (used for sensitivity checks)."""
        return QuadratureSpec(
            rel_tol=self.rel_tol / 2,
            abs_tol=self.abs_tol / 2,
            max_depth=self.max_depth,
            n_max=self.n_max,
            x_cutoff_mass=self.x_cutoff_mass / 2,
            t_cutoff_mass=self.t_cutoff_mass / 2,
        )


DEFAULT_SPEC = QuadratureSpec()


@dataclass(frozen=True)
class IntegralResult:
    """Value of an integral together with the engine's error estimate."""

    value: float | np.ndarray
    error: float
    panels: int

    def __float__(self) -> float:
        return float(self.value)


def _eval_panel(f, lo: float, hi: float):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    fx_hi = np.asarray(f(mid + half * _X21), dtype=float)
    fx_lo = np.asarray(f(mid + half * _X10), dtype=float)
    if not (np.all(np.isfinite(fx_hi)) and np.all(np.isfinite(fx_lo))):
        raise NoConvergence(
            f"non-finite integrand value in panel ({lo:.6g}, {hi:.6g})"
        )
    val_hi = half * np.tensordot(_W21, fx_hi, axes=(0, 0))
    val_lo = half * np.tensordot(_W10, fx_lo, axes=(0, 0))
    err = float(np.max(np.abs(val_hi - val_lo)))
    return val_hi, err


def _norm(value) -> float:
    return float(np.max(np.abs(value)))


def integrate(f, a: float, b: float, spec: QuadratureSpec | None = None,
              points=None) -> IntegralResult:
    """Adaptively integrate ``f`` over the finite interval ``(a, b)``.

    Args:
        f: vectorized integrand; never evaluated at the endpoints.
        a, b: finite bounds with ``a < b``.
        spec: tolerances; defaults to :data:`DEFAULT_SPEC`.
        points: optional interior breakpoints seeding the initial panels
            (pass locations of spikes or kinks the subdivision should see).

    Returns:
        :class:`IntegralResult` whose ``error`` bounds the rule discrepancy.

    Raises:
        NoConvergence: a panel reached ``max_depth`` with the global error
            still above tolerance.
        DomainError: invalid bounds.
    """
    spec = spec or DEFAULT_SPEC
    if not (math.isfinite(a) and math.isfinite(b)) or a >= b:
        raise DomainError(f"integrate requires finite a < b, got ({a}, {b})")

    cuts = [a]
    if points is not None:
        cuts.extend(sorted(p for p in points if a < p < b))
    cuts.append(b)

    heap = []
    seq = 0
    total = None
    total_err = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        val, err = _eval_panel(f, lo, hi)
        total = val if total is None else total + val
        total_err += err
        heapq.heappush(heap, (-err, seq, lo, hi, 0, val))
        seq += 1

    while total_err > max(spec.abs_tol, spec.rel_tol * _norm(total)):
        neg_err, _, lo, hi, depth, val = heapq.heappop(heap)
        if depth >= spec.max_depth:
            raise NoConvergence(
                f"max_depth={spec.max_depth} reached on ({lo:.6g}, {hi:.6g}) "
                f"with error {-neg_err:.3e} (total {total_err:.3e})"
            )
        if len(heap) > _MAX_PANELS:
            raise NoConvergence("panel budget exhausted; integrand too rough")
        mid = 0.5 * (lo + hi)
        val_l, err_l = _eval_panel(f, lo, mid)
        val_r, err_r = _eval_panel(f, mid, hi)
        total = total + (val_l + val_r - val)
        total_err += err_l + err_r - (-neg_err)
        heapq.heappush(heap, (-err_l, seq, lo, mid, depth + 1, val_l))
        seq += 1
        heapq.heappush(heap, (-err_r, seq, mid, hi, depth + 1, val_r))
        seq += 1

    value = float(total) if np.ndim(total) == 0 else total
    return IntegralResult(value=value, error=total_err, panels=len(heap))


def _row_scale(values, factor):
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        return values * factor[:, None]
    return values * factor


def integrate_sqrt_left(f, a: float, b: float,
                        spec: QuadratureSpec | None = None) -> IntegralResult:
    """Integrate with the substitution ``s = a + v**2``.

    Removes ``(s-a)**(-1/2)`` endpoint singularities and compresses
    essentially-singular damped factors such as ``exp(-k/(s-a))``.
    """
    width = math.sqrt(b - a)

    def g(v):
        return _row_scale(f(a + v * v), 2.0 * v)

    return integrate(g, 0.0, width, spec)


def integrate_sqrt_right(f, a: float, b: float,
                         spec: QuadratureSpec | None = None) -> IntegralResult:
    """Mirror of :func:`integrate_sqrt_left` for a right-endpoint singularity."""
    width = math.sqrt(b - a)

    def g(w):
        return _row_scale(f(b - w * w), 2.0 * w)

    return integrate(g, 0.0, width, spec)


def integrate_sqrt_both(f, a: float, b: float,
                        spec: QuadratureSpec | None = None) -> IntegralResult:
    """Split at the midpoint, substituting toward each endpoint."""
    mid = 0.5 * (a + b)
    left = integrate_sqrt_left(f, a, mid, spec)
    right = integrate_sqrt_right(f, mid, b, spec)
    return IntegralResult(
        value=left.value + right.value,
        error=left.error + right.error,
        panels=left.panels + right.panels,
    )


def integrate_semi_infinite(f, a: float, spec: QuadratureSpec | None = None, *,
                            decay_rate: float, amplitude: float = 1.0,
                            cutoff_mass: float | None = None,
                            points=None, sqrt_left: bool = False) -> IntegralResult:
    """Integrate ``f`` over ``(a, inf)`` using a caller-supplied decay hint.

    The caller asserts that beyond the bulk the integrand is bounded by an
    envelope ``amplitude * exp(-decay_rate * (s - a))``.  The cutoff is chosen
    so the envelope tail mass is below ``cutoff_mass`` and then verified
    against the actual integrand value at the cutoff; the interval is extended
    a few times before giving up.

    Raises:
        BadDecayHint: the integrand at the cutoff is inconsistent with the
            promised decay even after extending the interval.
    """
    spec = spec or DEFAULT_SPEC
    if decay_rate <= 0 or not math.isfinite(decay_rate):
        raise DomainError("decay_rate must be positive and finite")
    cutoff = spec.x_cutoff_mass if cutoff_mass is None else cutoff_mass

    span = (math.log(max(amplitude, 1.0)) + math.log(1.0 / cutoff)) / decay_rate
    hi = a + max(span, 1.0 / decay_rate)

    for _ in range(8):
        tail = float(np.max(np.abs(np.asarray(f(np.array([hi])))))) / decay_rate
        if sqrt_left:
            mid = a + min(1.0, 0.25 * (hi - a))
            part1 = integrate_sqrt_left(f, a, mid, spec)
            part2 = integrate(f, mid, hi, spec, points=points)
            result = IntegralResult(part1.value + part2.value,
                                    part1.error + part2.error,
                                    part1.panels + part2.panels)
        else:
            result = integrate(f, a, hi, spec, points=points)
        if tail <= cutoff * max(1.0, _norm(result.value)):
            return IntegralResult(result.value, result.error + tail,
                                  result.panels)
        hi = a + 2.0 * (hi - a)
        points = None
    raise BadDecayHint(
        f"tail estimate at s={hi:.6g} still above cutoff mass {cutoff:.1e}; "
        "decay hint appears wrong"
    )


def gl_composite(edges, order: int = 10):
    """Nodes and weights of a composite Gauss-Legendre rule over panel edges."""
    xg, wg = _leggauss(order)
    edges = np.asarray(edges, dtype=float)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    return nodes, weights


def poisson_series_truncation(lambda_t: float, eps: float) -> int:
    """Smallest ``N`` with the Poisson tail beyond ``N`` at or below ``eps``.

    Computed by direct summation of the probability mass.
    """
    if lambda_t < 0 or not math.isfinite(lambda_t):
        raise DomainError("lambda_t must be finite and >= 0")
    if not (0.0 < eps < 1.0):
        raise DomainError("eps must lie in (0, 1)")
    if lambda_t == 0.0:
        return 0
    # Work with the tail directly so eps near 1e-14 stays meaningful.
    log_term = -lambda_t  # log of P(N = 0)
    tail = -math.expm1(log_term)  # P(N > 0)
    n = 0
    while tail > eps:
        n += 1
        log_term += math.log(lambda_t / n)
        tail -= math.exp(log_term)
        if n > 10_000_000:  # pragma: no cover - unreachable for sane inputs
            raise NoConvergence("poisson truncation runaway")
    return n
