"""Joint claim-count/position kernels and hitting-time identities.

``g_density(n, t, x)`` is the joint density of seeing ``n`` claims by time
``t`` together with a surplus displacement of ``x``: a Poisson weight times a
Gaussian smoothed against the n-fold claim convolution.  Everything else here
is built on it: the first-hitting-time joint density (a Kendall-type ratio
``(x-u)/t`` times the kernel) and the discounted claim-count series whose sum
collapses to ``exp(-rho * x)`` with ``rho`` the Lundberg root.

Two evaluation paths coexist on purpose.  Point queries run the adaptive
engine over the claim-size axis (tolerance-controlled, linear space).  Batch
and lattice consumers use ``_g_row_log``: a fixed composite rule in the
standardized Gaussian variable, evaluated entirely in log space so that deep
underflow degrades gracefully instead of producing NaNs.  The two paths are
cross-checked in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import DomainError, NoConvergence
from .model import ClaimDistribution, Erlang, Exponential, HyperExponential, ModelParams
from .quadrature import (
    DEFAULT_SPEC,
    IntegralResult,
    QuadratureSpec,
    integrate_semi_infinite,
)

__all__ = [
    "KernelPoint",
    "g_density",
    "g_log_density",
    "hitting_density",
    "exp_rho_series",
    "hitting_time_mass",
    "discounted_count_tail_bound",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_ETA_SPAN = 10.0      # Gaussian window half-width, in standard deviations
_ETA_BOUNDARY = 8.0   # window length kept past the claim-support boundary
_UNDERFLOW_LOG = -600.0


@dataclass(frozen=True)
class KernelPoint:
    """One kernel evaluation, in both linear and log space."""

    n: int
    t: float
    x: float
    value: float
    log_value: float
    error: float = 0.0


@lru_cache(maxsize=64)
def _panel_template(panels: int):
    """Composite 12-point Gauss-Legendre rule on (0, 1)."""
    xg, wg = np.polynomial.legendre.leggauss(12)
    offsets = (np.arange(panels)[:, None] + 0.5 * (xg[None, :] + 1.0)) / panels
    weights = np.broadcast_to(wg[None, :] / (2.0 * panels), offsets.shape)
    return offsets.ravel().copy(), weights.ravel().copy()


def _log_poisson(n: int, rate: float) -> float:
    if rate == 0.0:
        return 0.0 if n == 0 else -np.inf
    return n * math.log(rate) - rate - special.gammaln(n + 1)


def _g0_log(model: ModelParams, t, x):
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    out = (-model.lam * t - (x - model.c * t) ** 2 / (4.0 * model.D * t)
           - 0.5 * np.log(4.0 * math.pi * model.D * t))
    return out


def _g_row_log(model: ModelParams, dist: ClaimDistribution, n: int, s: float,
               x, boost: int = 0) -> np.ndarray:
    """Log kernel values at one time ``s`` for a vector of displacements.

    Integration runs in the standardized Gaussian variable, which keeps the
    node placement correct both when the Gaussian is much narrower than the
    claim density (small ``s``) and much wider (large ``s``).  The claim
    support boundary always lands on the window edge, so the integrand is
    smooth at interior nodes.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if n == 0:
        return _g0_log(model, s, x)
    sd = math.sqrt(2.0 * model.D * s)
    w = x - model.c * s
    eta0 = w / sd
    lo = np.maximum(eta0, -_ETA_SPAN)
    hi = np.maximum(_ETA_SPAN, eta0 + _ETA_BOUNDARY)
    width = hi - lo

    claim_scale = max(dist.std, 1e-12)
    need = int(math.ceil(float(np.max(width)) * max(1.0, sd / claim_scale) / 2.0))
    panels = min(min(max(4, need), 64) << boost, 1024)
    xi, wi = _panel_template(panels)

    eta = lo[:, None] + width[:, None] * xi[None, :]
    z = sd * eta - w[:, None]
    with np.errstate(divide="ignore"):
        log_ig = (dist.conv_log_density(n, z) - 0.5 * eta**2 - _LOG_SQRT_2PI
                  + np.log(width[:, None] * wi[None, :]))
    row_max = np.max(log_ig, axis=1)
    out = np.full(len(x), -np.inf)
    ok = np.isfinite(row_max)
    if np.any(ok):
        shifted = np.exp(log_ig[ok] - row_max[ok, None])
        out[ok] = row_max[ok] + np.log(np.sum(shifted, axis=1))
    return out + _log_poisson(n, model.lam * s)


def _g_row_log_refined(model: ModelParams, dist: ClaimDistribution, n: int,
                       s: float, x, rel_tol: float, max_boost: int = 5):
    """Refine ``_g_row_log`` by doubling panels until log values settle."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if n == 0:
        return _g0_log(model, s, x), 0.0
    prev = _g_row_log(model, dist, n, s, x, boost=0)
    for boost in range(1, max_boost + 1):
        cur = _g_row_log(model, dist, n, s, x, boost=boost)
        live = (prev > _UNDERFLOW_LOG) | (cur > _UNDERFLOW_LOG)
        if not np.any(live):
            return cur, 0.0
        diff = float(np.max(np.abs(np.where(live, cur - prev, 0.0))))
        if diff <= rel_tol:
            return cur, diff
        prev = cur
    raise NoConvergence("kernel convolution rule did not settle",
                        axis="claim-size convolution")


def _check_nt(n: int, t: float):
    if not (isinstance(n, (int, np.integer)) and n >= 0):
        raise DomainError(f"n must be an integer >= 0, got {n!r}")
    if not (t > 0 and math.isfinite(t)):
        raise DomainError(f"t must be > 0, got {t!r}")


def g_density(model: ModelParams, dist: ClaimDistribution, n: int, t: float,
              x: float, spec: QuadratureSpec | None = None) -> KernelPoint:
    """Joint density of ``n`` claims by ``t`` and surplus displacement ``x``.

    The ``n = 0`` case is the closed-form damped Gaussian.  For ``n >= 1``
    the claim-size convolution integral runs through the adaptive engine;
    when the result would underflow linear doubles, the log-space composite
    rule takes over so ``log_value`` stays finite and ``value`` is a clean 0.
    """
    _check_nt(n, t)
    spec = spec or DEFAULT_SPEC
    x = float(x)
    if n == 0:
        log_val = float(_g0_log(model, t, np.array([x]))[0])
        return KernelPoint(n, t, x, math.exp(log_val) if log_val > -745 else 0.0,
                           log_val)

    log_pois = _log_poisson(n, model.lam * t)
    probe = float(_g_row_log(model, dist, n, t, np.array([x]), boost=1)[0])
    if probe < math.log(spec.abs_tol / spec.rel_tol):
        # Below this scale the linear engine can only deliver absolute
        # accuracy; the log-space rule keeps the accuracy relative.
        log_val, err = _g_row_log_refined(model, dist, n, t, np.array([x]),
                                          spec.rel_tol)
        log_val = float(log_val[0])
        return KernelPoint(n, t, x, 0.0 if log_val < -745 else math.exp(log_val),
                           log_val, err)

    sd = math.sqrt(2.0 * model.D * t)
    z_c = model.c * t - x
    inv_var = 1.0 / (4.0 * model.D * t)
    log_norm = 0.5 * math.log(4.0 * math.pi * model.D * t)

    def integrand(z):
        with np.errstate(divide="ignore", over="ignore"):
            return np.exp(dist.conv_log_density(n, z)
                          - (z + x - model.c * t) ** 2 * inv_var - log_norm)

    points = [p for p in (z_c - 8 * sd, z_c - sd, z_c, z_c + sd, z_c + 8 * sd)
              if p > 0]
    slope = getattr(dist, "tail_log_slope", None)
    rate = 0.5 / sd if slope is None else max(0.5 * slope(), 1e-3)
    res = integrate_semi_infinite(integrand, 0.0, spec, decay_rate=rate,
                                  amplitude=max(1.0, 1.0 / sd),
                                  cutoff_mass=spec.x_cutoff_mass, points=points)
    value = math.exp(log_pois) * float(res.value)
    with np.errstate(divide="ignore"):
        log_val = math.log(value) if value > 0 else -math.inf
    return KernelPoint(n, t, x, value, log_val,
                       math.exp(log_pois) * res.error)


def g_log_density(model: ModelParams, dist: ClaimDistribution, n: int,
                  t: float, x: float,
                  spec: QuadratureSpec | None = None) -> float:
    """Log-space kernel value (finite wherever the density is positive)."""
    _check_nt(n, t)
    spec = spec or DEFAULT_SPEC
    logs, _ = _g_row_log_refined(model, dist, n, t, np.array([float(x)]),
                                 spec.rel_tol)
    return float(logs[0])


def hitting_density(model: ModelParams, dist: ClaimDistribution, n: int,
                    t: float, x: float, u: float | None = None,
                    spec: QuadratureSpec | None = None) -> float:
    """Joint density of the first passage to level ``x`` at time ``t`` with
    ``n`` claims on the way, starting from ``u``: ``((x-u)/t) * g_t(n, x-u)``.
    """
    u = model.u if u is None else float(u)
    if not x > u:
        raise DomainError(f"hitting level must exceed the start: x={x}, u={u}")
    point = g_density(model, dist, n, t, x - u, spec)
    return (x - u) / t * point.value


def discounted_count_tail_bound(r: float, lam: float, delta: float,
                                n: int) -> float:
    """Bound on the discounted series tail beyond claim count ``n``.

    On the event that a hitting time carries exactly ``k`` claims, the k-th
    claim arrival precedes the hit, so the discount factor is at most the
    transform of the k-th arrival time, ``(lam/(lam+delta))**k``.  Summing the
    geometric tail gives the bound.  For ``delta = 0`` and ``r = 1`` it is
    vacuous (returns inf) and the caller must rely on term decay.
    """
    q = r * lam / (lam + delta)
    if q >= 1.0:
        return math.inf
    return q ** (n + 1) / (1.0 - q)


def _g_counts_rows_log(model: ModelParams, dist: ClaimDistribution,
                       n_hi: int, s: float, x_vec, boost: int = 1
                       ) -> np.ndarray:
    """Log kernel matrix ``(count, x)`` for counts ``0..n_hi`` at one time.

    All counts share one grid in the standardized Gaussian variable (the
    window geometry does not depend on the count), so the whole matrix costs
    a single broadcast pass for closed-form convolution families and one
    interpolation sweep per count otherwise.
    """
    x_vec = np.atleast_1d(np.asarray(x_vec, dtype=float))
    out = np.empty((n_hi + 1, len(x_vec)))
    out[0] = _g0_log(model, s, x_vec)
    if n_hi == 0:
        return out

    sd = math.sqrt(2.0 * model.D * s)
    w = x_vec - model.c * s
    lam_s = model.lam * s
    counts = np.arange(1, n_hi + 1)
    log_pois = (counts * math.log(lam_s) - lam_s
                - special.gammaln(counts + 1))

    def reduce_rows(log_ig):
        """Log-sum-exp over the node axis (last), -inf rows preserved."""
        row_max = np.max(log_ig, axis=-1)
        safe = np.where(np.isfinite(row_max), row_max, 0.0)
        sums = np.sum(np.exp(log_ig - safe[..., None]), axis=-1)
        with np.errstate(divide="ignore"):
            return np.where(np.isfinite(row_max), safe + np.log(sums),
                            -np.inf)

    def eval_counts(cts, z, base):
        with np.errstate(divide="ignore"):
            if isinstance(dist, (Exponential, Erlang)):
                log_ig = dist.conv_log_density(cts[:, None, None],
                                               z[None, :, :]) \
                    + base[None, :, :]
                return reduce_rows(log_ig)
            return np.stack([
                reduce_rows(dist.conv_log_density(int(nn), z) + base)
                for nn in cts])

    # Counts with single-claim-scale structure: composite rule in the
    # standardized variable sized to resolve that scale.
    n_rough = min(3, n_hi)
    eta0 = w / sd
    lo = np.maximum(eta0, -_ETA_SPAN)
    hi = np.maximum(_ETA_SPAN, eta0 + _ETA_BOUNDARY)
    width = hi - lo
    claim_scale = max(dist.std, 1e-12)
    need = int(math.ceil(float(np.max(width)) * max(1.0, sd / claim_scale)
                         / 2.0))
    panels = min(min(max(4, need), 64) << boost, 1024)
    xi, wi = _panel_template(panels)
    eta = lo[:, None] + width[:, None] * xi[None, :]
    z = sd * eta - w[:, None]
    base = -0.5 * eta**2 - _LOG_SQRT_2PI + np.log(width[:, None] * wi[None, :])
    out[1:n_rough + 1] = eval_counts(counts[:n_rough], z, base) \
        + log_pois[:n_rough, None]

    if n_hi > n_rough:
        # Higher convolutions are CLT-smooth, so Gauss-Hermite against the
        # Gaussian factor converges fast regardless of the width ratio.
        gh_x, gh_w = _hermgauss_cached(48 << min(boost, 2))
        z = -w[:, None] + (2.0 * math.sqrt(model.D * s)) * gh_x[None, :]
        base = np.broadcast_to(np.log(gh_w / math.sqrt(math.pi))[None, :],
                               z.shape)
        out[n_rough + 1:] = eval_counts(counts[n_rough:], z, base) \
            + log_pois[n_rough:, None]
    return out


@lru_cache(maxsize=8)
def _hermgauss_cached(order: int):
    return np.polynomial.hermite.hermgauss(order)


def _g_profile_log(model: ModelParams, dist: ClaimDistribution, n_hi: int,
                   s: float, x: float, boost: int = 0) -> np.ndarray:
    """Log kernel values at one ``(s, x)`` for every count ``0..n_hi``."""
    return _g_counts_rows_log(model, dist, n_hi, s, np.array([x]),
                              boost=boost)[:, 0]


def _discounted_profile(model: ModelParams, dist: ClaimDistribution,
                        delta: float, x: float, n_hi: int,
                        spec: QuadratureSpec) -> np.ndarray:
    """Time integrals ``I_n = int exp(-delta*s) (x/s) g_s(n, x) ds``, n <= n_hi.

    Counts up to ``n_split`` go through the adaptive engine as one vector
    integrand; the geometric remainder (wide, smooth bumps in time) uses a
    fixed composite rule on a shared grid, which is orders of magnitude
    cheaper and accurate far beyond those terms' contribution.
    """
    n_split = min(40, n_hi)

    def head(svec):
        svec = np.atleast_1d(svec)
        rows = np.empty((len(svec), n_split + 1))
        for i, s in enumerate(svec):
            logs = _g_profile_log(model, dist, n_split, float(s), x, boost=1)
            rows[i] = np.exp(np.clip(logs + math.log(x) - math.log(s)
                                     - delta * s, -745.0, 40.0))
        return rows

    rate = delta + 0.4 * min(model.lam, model.c**2 / (4.0 * model.D))
    head_res = integrate_semi_infinite(
        head, 0.0, spec, decay_rate=rate, amplitude=2.0 * max(1.0, x),
        cutoff_mass=spec.t_cutoff_mass, sqrt_left=True)
    values = np.empty(n_hi + 1)
    values[:n_split + 1] = np.asarray(head_res.value)

    if n_hi > n_split:
        # Fixed rule for the tail counts: bump centers n/(lam+delta), widths
        # >= sqrt(n_split)/(lam+delta); spacing is set off the narrowest.
        lam_d = model.lam + delta
        t_hi = (n_hi + 12.0 * math.sqrt(n_hi) + 5.0) / lam_d + 30.0 / rate
        spacing = max(0.4 / lam_d, 0.3 * math.sqrt(n_split) / lam_d)
        head_t = min(4.0 / lam_d, t_hi / 4)
        xg, wg = np.polynomial.legendre.leggauss(8)
        vh = math.sqrt(head_t)
        vnodes, vweights = [], []
        for p in range(12):  # sqrt-substituted panels near the origin
            a, b = vh * p / 12, vh * (p + 1) / 12
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            v = mid + half * xg
            vnodes.append(v * v)
            vweights.append(half * wg * 2.0 * v)
        n_panels = int(math.ceil((t_hi - head_t) / (8.0 * spacing)))
        edges = np.linspace(head_t, t_hi, n_panels + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            vnodes.append(mid + half * xg)
            vweights.append(half * wg)
        snodes = np.concatenate(vnodes)
        sweights = np.concatenate(vweights)
        acc = np.zeros(n_hi - n_split)
        for s, wt in zip(snodes, sweights):
            logs = _g_profile_log(model, dist, n_hi, float(s), x,
                                  boost=1)[n_split + 1:]
            acc += wt * np.exp(np.clip(logs + math.log(x) - math.log(s)
                                       - delta * s, -745.0, 40.0))
        values[n_split + 1:] = acc
    return values


def _series_total(model: ModelParams, dist: ClaimDistribution, r: float,
                  delta: float, x: float, spec: QuadratureSpec,
                  tol: float) -> float:
    """Sum ``r**n * I_n`` with empirical geometric tail completion.

    The terms decay geometrically (rate set by the generating function's
    singularity in ``r``), so after the cap the tail is estimated from the
    observed ratio of the last terms and added; if that estimate is not
    comfortably below ``tol`` the series is reported as unconverged.  The
    a-priori bound :func:`discounted_count_tail_bound` is checked first
    wherever it is finite.
    """
    profile = _discounted_profile(model, dist, delta, x, spec.n_max, spec)
    terms = profile * r ** np.arange(spec.n_max + 1)
    total = float(np.sum(terms))

    live = terms > max(spec.abs_tol, 1e-3 * tol)
    if not live[-3:].any():
        return total  # terms died out well before the cap
    bound = discounted_count_tail_bound(r, model.lam, delta, spec.n_max)
    if bound <= tol:
        return total
    tail = float(terms[-1])
    ratio = (terms[-1] / terms[-4]) ** (1.0 / 3.0) \
        if len(terms) >= 4 and terms[-4] > 0 else 1.0
    if 0.0 < ratio < 1.0:
        tail_est = tail * ratio / (1.0 - ratio)
        if tail_est <= tol:
            return total + tail_est
    raise NoConvergence(
        f"claim-count series tail ~{tail:.2e}/term at n_max={spec.n_max} "
        f"exceeds tolerance {tol:.1e}; raise n_max",
        axis="claim-count series")


def exp_rho_series(model: ModelParams, dist: ClaimDistribution, r: float,
                   delta: float, x: float,
                   spec: QuadratureSpec | None = None) -> float:
    """Discounted claim-count series over hitting times of level ``x``.

    Sums ``r**n`` times the time-integrated, discounted hitting kernel; the
    total equals ``exp(-rho * x)`` with ``rho`` the Lundberg root for
    ``(r, delta)``.
    """
    if not (0.0 < r <= 1.0):
        raise DomainError(f"r must lie in (0, 1], got {r}")
    if not delta > 0:
        raise DomainError(f"delta must be > 0, got {delta}")
    if not x > 0:
        raise DomainError(f"x must be > 0, got {x}")
    spec = spec or DEFAULT_SPEC
    tol = max(100.0 * spec.abs_tol, 10.0 * spec.rel_tol)
    return _series_total(model, dist, r, delta, x, spec, tol)


def hitting_time_mass(model: ModelParams, dist: ClaimDistribution, x: float,
                      u: float | None = None,
                      spec: QuadratureSpec | None = None) -> float:
    """Total mass of the hitting-time law of level ``x`` (1 under net profit).

    Computed as the undiscounted claim-count series of time integrals, so it
    doubles as a normalization check of the kernel family.  The discount-free
    series converges geometrically but slowly; expect to need ``n_max`` well
    above 100 for tolerances near 1e-5.
    """
    u = model.u if u is None else float(u)
    if not x > u:
        raise DomainError(f"hitting level must exceed the start: x={x}, u={u}")
    spec = spec or DEFAULT_SPEC
    tol = max(100.0 * spec.abs_tol, 10.0 * spec.rel_tol)
    return _series_total(model, dist, 1.0, 0.0, x - u, spec, tol)
