"""Joint densities of the ruin time and the claim count, split by cause.

Ruin happens either because a claim overshoots the surplus (``omega_s``) or
because the diffusion grinds the surplus to zero between claims
(``omega_d``).  With no claims the oscillation density is the damped
first-passage law of the drifted diffusion in closed form; with ``n``
claims both causes reduce to integrals of the pre-ruin density against the
claim tail or against the claim-then-drift first-passage kernel.

``omega_d`` for ``n >= 1`` is a genuinely three-dimensional integral and is
evaluated on product lattices (time nodes under square-root substitutions at
both endpoints, a shared surplus lattice, and a fixed inner rule for the
pre-ruin correction).  Its error estimate comes from re-evaluating at a
coarser resolution.  ``phi_transform`` integrates the same formulas in the
transform order: the time convolution factors into a product of discounted
tables, which is orders of magnitude cheaper than quadrature over the
density surface and equal to it term by term (the integrands are
nonnegative, so the swap is exact).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, NoConvergence
from .kernels import (
    _g0_log,
    _g_counts_rows_log,
    _g_row_log_refined,
    discounted_count_tail_bound,
)
from .model import ClaimDistribution, Erlang, Exponential, ModelParams
from .preruin import surplus_lattice
from .quadrature import (
    DEFAULT_SPEC,
    QuadratureSpec,
    gl_composite,
    integrate_sqrt_both,
    poisson_series_truncation,
)

__all__ = [
    "RuinDensityPoint",
    "omega_d_zero",
    "omega_d_zero_log",
    "omega_s",
    "omega_d",
    "omega",
    "psi_cumulative",
    "phi_transform",
]

_LOG_SQRT_PI = 0.5 * math.log(math.pi)


@dataclass(frozen=True)
class RuinDensityPoint:
    """Cause-decomposed joint density at one ``(n, t)`` point."""

    n: int
    t: float
    omega_s: float
    omega_d: float
    omega: float
    error: float = 0.0


def _check_common(n: int, t: float, u: float):
    if not (isinstance(n, (int, np.integer)) and n >= 0):
        raise DomainError(f"n must be an integer >= 0, got {n!r}")
    if not (t > 0 and math.isfinite(t)):
        raise DomainError(f"t must be > 0, got {t!r}")
    if not (u > 0 and math.isfinite(u)):
        raise DomainError(f"u must be > 0, got {u!r}")


def _norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


# -- no-claim oscillation density (closed forms) --------------------------


def omega_d_zero_log(model: ModelParams, t: float, u: float | None = None):
    """Log of the no-claim oscillation-ruin density (vectorized in ``t``)."""
    u = model.u if u is None else float(u)
    if not u > 0:
        raise DomainError("omega_d_zero requires u > 0")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise DomainError("omega_d_zero requires t > 0")
    out = (math.log(u) - math.log(2.0) - _LOG_SQRT_PI
           - 0.5 * np.log(model.D * t_arr**3)
           - model.lam * t_arr
           - (u + model.c * t_arr) ** 2 / (4.0 * model.D * t_arr))
    return out if out.ndim else float(out)


def omega_d_zero(model: ModelParams, t: float, u: float | None = None):
    """No-claim oscillation-ruin density: drifted-diffusion first passage
    damped by the no-claim probability."""
    logs = omega_d_zero_log(model, t, u)
    with np.errstate(over="ignore"):
        out = np.exp(np.asarray(logs))
    return out if out.ndim else float(out)


def _passage_rate(model: ModelParams, extra: float) -> float:
    """Exponent rate of the killed first-passage transform at damping
    ``lam + extra``: ``(c + sqrt(c^2 + 4D(lam+extra))) / (2D)``."""
    return (model.c + math.sqrt(model.c**2 + 4.0 * model.D
                                * (model.lam + extra))) / (2.0 * model.D)


def _psi_d_zero_closed(model: ModelParams, t: float, u: float) -> float:
    """Closed form of the cumulative no-claim oscillation ruin by ``t``."""
    dc = math.sqrt(model.c**2 + 4.0 * model.D * model.lam)
    sd = math.sqrt(2.0 * model.D * t)
    tilt = math.exp(u * (dc - model.c) / (2.0 * model.D))
    body = (_norm_cdf((-u - dc * t) / sd)
            + math.exp(-u * dc / model.D) * _norm_cdf((-u + dc * t) / sd))
    return tilt * body


# -- ruin by claim ----------------------------------------------------------


def omega_s(model: ModelParams, dist: ClaimDistribution, n: int, t: float,
            u: float | None = None,
            spec: QuadratureSpec | None = None) -> float:
    """Density of ruin at ``t`` by the ``n``-th claim.

    The pre-ruin density with ``n - 1`` claims is integrated against the
    claim tail; zero for ``n = 0`` (a claim cause needs a claim).
    """
    u = model.u if u is None else float(u)
    _check_common(n, t, u)
    if n == 0:
        return 0.0
    spec = spec or DEFAULT_SPEC
    m = n - 1

    x_nodes, x_weights = surplus_lattice(model, dist, t, u)
    pbar_w = x_weights * dist.survival(x_nodes)

    logs, _ = _g_row_log_refined(model, dist, m, t, x_nodes - u, spec.rel_tol)
    free = float(pbar_w @ np.exp(np.clip(logs, -745.0, 40.0)))

    log_x = np.log(x_nodes)
    minus_u = np.array([-u])

    def correction(svec):
        svec = np.atleast_1d(svec)
        out = np.empty(len(svec))
        for i, s in enumerate(svec):
            hit = _g_counts_rows_log(model, dist, m, s, x_nodes)
            down = _g_counts_rows_log(model, dist, m, t - s, minus_u)[:, 0]
            combo = hit + down[::-1, None] + (log_x - math.log(s))[None, :]
            vals = np.sum(np.exp(np.clip(combo, -745.0, 40.0)), axis=0)
            out[i] = float(pbar_w @ vals)
        return out

    sub = integrate_sqrt_both(correction, 0.0, t, spec).value
    return max(model.lam * (free - float(sub)), 0.0)


# -- ruin by oscillation after claims (lattice evaluation) ------------------


def _sqrt_both_time_rule(t: float, panels_per_side: int, order: int = 10):
    """Time nodes/weights on (0, t) substituting ``sqrt`` at both endpoints."""
    vh = math.sqrt(0.5 * t)
    v_nodes, v_w = gl_composite(np.linspace(0.0, vh, panels_per_side + 1),
                                order)
    left = (v_nodes**2, 2.0 * v_nodes * v_w)
    right = (t - v_nodes**2, 2.0 * v_nodes * v_w)
    nodes = np.concatenate([left[0], right[0]])
    weights = np.concatenate([left[1], right[1]])
    return nodes, weights


def _unit_sqrt_template(panels_per_side: int = 4, order: int = 8):
    """Quadrature template on (0, 1) clustering at both endpoints."""
    vh = math.sqrt(0.5)
    v, w = gl_composite(np.linspace(0.0, vh, panels_per_side + 1), order)
    nodes = np.concatenate([v**2, 1.0 - v**2])
    weights = np.concatenate([2.0 * v * w, 2.0 * v * w])
    return nodes, weights


def _passage_kernel_log(model: ModelParams, s: float, ell):
    """Log of the claim-to-zero first-passage kernel at elapsed time ``s``."""
    ell = np.asarray(ell, dtype=float)
    with np.errstate(divide="ignore"):
        return (np.log(ell) - model.lam * s
                - (ell + model.c * s) ** 2 / (4.0 * model.D * s)
                - math.log(2.0) - _LOG_SQRT_PI
                - 0.5 * math.log(model.D * s**3))


def _passage_ell_hi(model: ModelParams, s: float) -> float:
    """Upper support estimate of the passage kernel at elapsed time ``s``."""
    cs = model.c * s
    ell_star = 0.5 * (-cs + math.sqrt(cs * cs + 8.0 * model.D * s))
    return ell_star + math.sqrt(180.0 * model.D * s)


_UNIT_RULE = gl_composite(np.linspace(0.0, 1.0, 11), 8)


def _j_row(model: ModelParams, dist: ClaimDistribution, s: float,
           y_nodes: np.ndarray) -> np.ndarray:
    """Claim-size convolution of the passage kernel at each surplus level:
    ``J_s(y) = int_0^y k_s(l) p(y - l) dl``."""
    unit_n, unit_w = _UNIT_RULE
    ell_hi = _passage_ell_hi(model, s)
    base_n, base_w = ell_hi * unit_n, ell_hi * unit_w
    k_base = np.exp(np.clip(_passage_kernel_log(model, s, base_n), -745.0,
                            40.0)) * base_w
    out = np.empty(len(y_nodes))
    big = y_nodes >= ell_hi
    if np.any(big):
        out[big] = dist.density(y_nodes[big][:, None]
                                - base_n[None, :]) @ k_base
    small = np.nonzero(~big)[0]
    if len(small):
        ys = y_nodes[small]
        nodes = ys[:, None] * unit_n[None, :]
        kvals = np.exp(np.clip(_passage_kernel_log(model, s, nodes), -745.0,
                               40.0))
        out[small] = np.sum(kvals * dist.density(ys[:, None] - nodes)
                            * (ys[:, None] * unit_w[None, :]), axis=1)
    return out


_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(24)


def _omega_d_lattice(model: ModelParams, dist: ClaimDistribution, n: int,
                     t: float, u: float, spec: QuadratureSpec,
                     level: int) -> float:
    """One lattice evaluation of the oscillation-ruin density, ``n >= 1``.

    ``level`` sets the resolution; the caller differences two levels for the
    error estimate.  The inner structure follows the kernel factorization:
    the claim-size convolution ``J`` depends on the kernel time and the
    surplus only, the pre-ruin rows reuse one surplus lattice, and the
    no-claim pre-ruin row (a collapsing Gaussian) is handled by
    Gauss-Hermite against ``J`` so the lattice never has to resolve it.
    """
    m = n - 1
    s_panels = (2, 3, 5)[level]
    s_order = (6, 8, 8)[level]
    y_order = (6, 6, 8)[level]
    y_panels = (12, 16, 24)[level]
    s_nodes, s_weights = _sqrt_both_time_rule(t, s_panels, s_order)
    y_nodes, y_weights = surplus_lattice(model, dist, t, u, order=y_order,
                                         max_panels=y_panels)
    xi, omega_q = _unit_sqrt_template((2, 2, 3)[level], (6, 8, 8)[level])

    log_y = np.log(y_nodes)
    minus_u = np.array([-u])
    tau_floor = 1e-5 * t

    total = 0.0
    for s, ws in zip(s_nodes, s_weights):
        tau = t - s
        j_row = _j_row(model, dist, s, y_nodes)

        if m == 0:
            # Free part by Gauss-Hermite in the collapsing Gaussian.
            gh_y = (u + model.c * tau) + 2.0 * math.sqrt(model.D * tau) \
                * _GH_NODES
            live = gh_y > 0
            free = 0.0
            if np.any(live):
                j_gh = _j_row(model, dist, s, gh_y[live])
                free = math.exp(-model.lam * tau) \
                    * float(_GH_WEIGHTS[live] @ j_gh) / math.sqrt(math.pi)
            # Correction on the lattice (smooth, negligible for small tau).
            sub = 0.0
            if tau > tau_floor:
                sp = tau * xi
                log_a = (_g0_log(model, sp[:, None], y_nodes[None, :])
                         + log_y[None, :] - np.log(sp)[:, None])
                log_b = _g0_log(model, tau - sp, -u)
                rows = np.exp(np.clip(log_a + log_b[:, None], -745.0, 40.0))
                sub = float((tau * omega_q) @ (rows @ (y_weights * j_row)))
            total += ws * (free - sub)
            continue

        if tau <= tau_floor:
            continue  # contributes O(tau^(m+1)); folded into the estimate
        logs, _ = _g_row_log_refined(model, dist, m, tau, y_nodes - u,
                                     max(spec.rel_tol, 1e-7))
        h_row = np.exp(np.clip(logs, -745.0, 40.0))
        sub_row = np.zeros(len(y_nodes))
        for frac, wq in zip(xi, omega_q):
            sp = tau * frac
            hit = _g_counts_rows_log(model, dist, m, sp, y_nodes, boost=0)
            down = _g_counts_rows_log(model, dist, m, tau - sp, minus_u,
                                      boost=0)[:, 0]
            combo = hit + down[::-1, None] + (log_y - math.log(sp))[None, :]
            sub_row += (tau * wq) * np.sum(
                np.exp(np.clip(combo, -745.0, 40.0)), axis=0)
        h_row = np.maximum(h_row - sub_row, 0.0)
        total += ws * float((y_weights * j_row) @ h_row)
    return model.lam * total


def omega_d(model: ModelParams, dist: ClaimDistribution, n: int, t: float,
            u: float | None = None,
            spec: QuadratureSpec | None = None) -> float:
    """Density of ruin at ``t`` by oscillation after ``n`` claims."""
    u = model.u if u is None else float(u)
    _check_common(n, t, u)
    if n == 0:
        return float(omega_d_zero(model, t, u))
    spec = spec or DEFAULT_SPEC
    return _omega_d_lattice(model, dist, n, t, u, spec, level=2)


def _omega_d_with_error(model, dist, n, t, u, spec):
    fine = _omega_d_lattice(model, dist, n, t, u, spec, level=2)
    coarse = _omega_d_lattice(model, dist, n, t, u, spec, level=1)
    return fine, abs(fine - coarse)


def omega(model: ModelParams, dist: ClaimDistribution, n: int, t: float,
          u: float | None = None,
          spec: QuadratureSpec | None = None) -> RuinDensityPoint:
    """Cause-decomposed ruin density point; the total is the exact sum."""
    u = model.u if u is None else float(u)
    _check_common(n, t, u)
    spec = spec or DEFAULT_SPEC
    if n == 0:
        d = float(omega_d_zero(model, t, u))
        return RuinDensityPoint(n=n, t=t, omega_s=0.0, omega_d=d, omega=d)
    s_val = omega_s(model, dist, n, t, u, spec)
    d_val, d_err = _omega_d_with_error(model, dist, n, t, u, spec)
    return RuinDensityPoint(n=n, t=t, omega_s=s_val, omega_d=d_val,
                            omega=s_val + d_val, error=d_err)


# -- cumulative law ---------------------------------------------------------


def psi_cumulative(model: ModelParams, dist: ClaimDistribution, n: int,
                   t: float, u: float | None = None, cause: str = "any",
                   spec: QuadratureSpec | None = None) -> float:
    """Probability of ruin by ``t`` with exactly ``n`` claims, by cause.

    ``cause`` is one of ``claim``, ``oscillation``, ``any``.  ``t`` may be
    ``inf``; the tail beyond a large horizon is completed by exponential
    extrapolation from the last integrand values.
    """
    if cause not in ("claim", "oscillation", "any"):
        raise DomainError(f"unknown cause {cause!r}")
    u = model.u if u is None else float(u)
    if not (isinstance(n, (int, np.integer)) and n >= 0):
        raise DomainError(f"n must be an integer >= 0, got {n!r}")
    if not t > 0:
        raise DomainError(f"t must be > 0, got {t!r}")
    spec = spec or DEFAULT_SPEC

    if n == 0:
        if cause == "claim":
            return 0.0
        if math.isinf(t):
            return math.exp(-u * _passage_rate(model, 0.0))
        return _psi_d_zero_closed(model, t, u)

    def integrand(tp: float) -> float:
        val = 0.0
        if cause in ("claim", "any"):
            val += omega_s(model, dist, n, tp, u, spec)
        if cause in ("oscillation", "any"):
            val += _omega_d_lattice(model, dist, n, tp, u, spec, level=1)
        return val

    horizon = t
    if math.isinf(t):
        # Beyond the bulk the density decays at least at the no-claim
        # passage rate; extrapolate the remainder exponentially.
        horizon = (n + 4.0 * math.sqrt(n)) / model.lam + 12.0 / min(
            model.lam, model.c**2 / (4.0 * model.D))
    nodes, weights = _sqrt_both_time_rule(horizon, 5, 8)
    vals = np.array([integrand(float(tp)) for tp in nodes])
    total = float(weights @ vals)
    if math.isinf(t):
        t1, t2 = 0.92 * horizon, horizon
        v1, v2 = integrand(t1), integrand(t2)
        if v2 > 0 and v1 > v2:
            rate = math.log(v1 / v2) / (t2 - t1)
            total += v2 / rate
    return min(max(total, 0.0), 1.0)


# -- joint transform via discounted tables ----------------------------------


def _transform_time_rule(model: ModelParams, delta: float, n_hi: int):
    """Shared time grid covering every count's discounted bump."""
    lam_d = model.lam + delta
    rate = delta + 0.4 * min(model.lam, model.c**2 / (4.0 * model.D))
    t_hi = (n_hi + 12.0 * math.sqrt(max(n_hi, 1)) + 5.0) / lam_d + 30.0 / rate
    head = min(4.0 / lam_d, 0.25 * t_hi)
    v_nodes, v_w = gl_composite(np.linspace(0.0, math.sqrt(head), 13), 8)
    spacing = 0.35 / lam_d
    body_panels = int(math.ceil((t_hi - head) / (8.0 * spacing)))
    body_nodes, body_w = gl_composite(np.linspace(head, t_hi,
                                                  body_panels + 1), 8)
    nodes = np.concatenate([v_nodes**2, body_nodes])
    weights = np.concatenate([2.0 * v_nodes * v_w, body_w])
    return nodes, weights


def _exp_weighted_claim_integral(dist: ClaimDistribution, theta: float,
                                 y_nodes: np.ndarray) -> np.ndarray:
    """``int_0^y exp(-theta*(y-z)) p(z) dz`` at each surplus node."""
    if isinstance(dist, Exponential):
        mu = dist.mu
        if abs(mu - theta) < 1e-9:
            return mu * y_nodes * np.exp(-mu * y_nodes)
        return mu * (np.exp(-theta * y_nodes) - np.exp(-mu * y_nodes)) \
            / (mu - theta)
    unit_n, unit_w = _UNIT_RULE
    nodes = y_nodes[:, None] * unit_n[None, :]
    vals = np.exp(-theta * (y_nodes[:, None] - nodes)) * dist.density(nodes)
    return np.sum(vals * (y_nodes[:, None] * unit_w[None, :]), axis=1)


def phi_transform(model: ModelParams, dist: ClaimDistribution, r: float,
                  delta: float, u: float | None = None,
                  spec: QuadratureSpec | None = None) -> float:
    """Joint transform of the ruin time and claim count,
    ``E[r^N exp(-delta*T); T finite]``.

    Equals ``sum_n r**n int exp(-delta*t) omega(n, t) dt``; the time
    convolutions inside the density formulas factor under the transform, so
    each count's contribution is a single surplus integral of discounted
    tables.  The no-claim term is the closed-form passage transform.
    """
    u = model.u if u is None else float(u)
    if not (0.0 < r <= 1.0):
        raise DomainError(f"r must lie in (0, 1], got {r}")
    if not delta > 0:
        raise DomainError(f"delta must be > 0, got {delta}")
    if not u > 0:
        raise DomainError("phi_transform requires u > 0")
    spec = spec or DEFAULT_SPEC

    n_hi = spec.n_max
    y_nodes, y_weights = surplus_lattice(model, dist, 12.0 / delta
                                         if delta < 2 else 6.0, u)
    t_nodes, t_weights = _transform_time_rule(model, delta, n_hi)

    # Discounted tables: hitting factor at y, free kernel at y-u and at -u.
    table_hit = np.zeros((n_hi + 1, len(y_nodes)))
    table_free = np.zeros((n_hi + 1, len(y_nodes)))
    table_down = np.zeros(n_hi + 1)
    log_y = np.log(y_nodes)
    for s, wt in zip(t_nodes, t_weights):
        disc = -delta * s
        rows_y = _g_counts_rows_log(model, dist, n_hi, s, y_nodes)
        table_hit += wt * np.exp(np.clip(
            rows_y + (log_y - math.log(s))[None, :] + disc, -745.0, 40.0))
        rows_free = _g_counts_rows_log(model, dist, n_hi, s, y_nodes - u)
        table_free += wt * np.exp(np.clip(rows_free + disc, -745.0, 40.0))
        rows_down = _g_counts_rows_log(model, dist, n_hi, s,
                                       np.array([-u]))[:, 0]
        table_down += wt * np.exp(np.clip(rows_down + disc, -745.0, 40.0))

    theta = _passage_rate(model, delta)
    weight_y = y_weights * (dist.survival(y_nodes)
                            + _exp_weighted_claim_integral(dist, theta,
                                                           y_nodes))

    # Discounted pre-ruin table and the count series.
    terms = np.empty(n_hi + 1)
    for j in range(n_hi + 1):
        hhat = table_free[j].copy()
        for l in range(j + 1):
            hhat -= table_hit[l] * table_down[j - l]
        terms[j] = model.lam * float(weight_y @ np.maximum(hhat, 0.0))

    powers = r ** (1.0 + np.arange(n_hi + 1))
    total = math.exp(-u * theta) + float(powers @ terms)

    tail_terms = powers * terms
    tol = max(1e3 * spec.abs_tol, 1e-6)
    if tail_terms[-3:].max() > tol:
        bound = discounted_count_tail_bound(r, model.lam, delta, n_hi)
        if bound > tol:
            ratio = (tail_terms[-1] / tail_terms[-4]) ** (1 / 3) \
                if len(tail_terms) >= 4 and tail_terms[-4] > 0 else 1.0
            if 0.0 < ratio < 1.0 and tail_terms[-1] * ratio / (1 - ratio) <= tol:
                total += tail_terms[-1] * ratio / (1 - ratio)
            else:
                raise NoConvergence(
                    "transform count series not settled; raise n_max",
                    axis="claim-count series")
    return total
