"""Surplus-model parameters and claim-size distributions.

The surplus process is ``u + c*t - (claims up to t) + sigma*B(t)`` with a
Poisson claim counter of intensity ``lam``.  Four claim families are
supported: exponential, Erlang, and hyperexponential laws (closed-form
density, survival, Laplace transform, and where available convolutions) plus
a tabulated law on a uniform grid for everything else.  Grid laws convolve
spectrally, so n-fold convolution powers cost one FFT each and are cached.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import DomainError, InvalidParameter, NetProfitViolation

__all__ = [
    "ModelParams",
    "ClaimDistribution",
    "Exponential",
    "Erlang",
    "HyperExponential",
    "TabulatedDensity",
    "new_model",
    "claim_density",
    "claim_survival",
    "claim_laplace",
    "claim_convolution",
    "tabulated_from_csv",
    "discretize",
]

_MASS_TOL_CLOSED = 1e-10
_MASS_TOL_GRID = 1e-6


def _require_finite(**kwargs):
    for name, value in kwargs.items():
        if not math.isfinite(value):
            raise InvalidParameter(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class ModelParams:
    """Validated parameters of the perturbed surplus process.

    Attributes:
        u: initial reserve (>= 0).
        c: premium rate (> 0).
        lam: Poisson claim intensity (> 0).
        sigma: diffusion volatility (> 0; the unperturbed model is rejected).
        D: derived diffusion coefficient, exactly ``sigma**2 / 2``.
    """

    u: float
    c: float
    lam: float
    sigma: float
    D: float

    def __post_init__(self):
        _require_finite(u=self.u, c=self.c, lam=self.lam, sigma=self.sigma)
        if self.u < 0:
            raise InvalidParameter("initial reserve u must be >= 0")
        if self.c <= 0:
            raise InvalidParameter("premium rate c must be > 0")
        if self.lam <= 0:
            raise InvalidParameter("claim intensity lam must be > 0")
        if self.sigma <= 0:
            raise InvalidParameter("volatility sigma must be > 0")
        if self.D != self.sigma**2 / 2.0:
            raise InvalidParameter("D must equal sigma**2 / 2 exactly")

    def with_reserve(self, u: float) -> "ModelParams":
        return ModelParams(u=u, c=self.c, lam=self.lam, sigma=self.sigma,
                           D=self.D)


def new_model(u: float, c: float, lam: float, sigma: float,
              claims: "ClaimDistribution") -> ModelParams:
    """Build :class:`ModelParams`, enforcing the net-profit condition.

    Raises:
        NetProfitViolation: if ``c <= lam * claims.mean`` (strict inequality
            is required).
        InvalidParameter: for non-finite or out-of-range inputs.
    """
    model = ModelParams(u=float(u), c=float(c), lam=float(lam),
                        sigma=float(sigma), D=float(sigma) ** 2 / 2.0)
    if model.c <= model.lam * claims.mean:
        raise NetProfitViolation(
            f"net profit requires c > lam * E[X]: {model.c} <= "
            f"{model.lam * claims.mean}"
        )
    return model


class ClaimDistribution(ABC):
    """Common interface of claim-size laws.

    All evaluation methods are vectorized over their numeric argument and are
    tolerant of out-of-support points (density 0 there); the module-level
    operation wrappers enforce the stricter call domains.  Instances are
    immutable after construction; any caches are write-once.
    """

    @property
    @abstractmethod
    def mean(self) -> float: ...

    @property
    @abstractmethod
    def variance(self) -> float: ...

    @abstractmethod
    def density(self, x): ...

    @abstractmethod
    def log_density(self, x): ...

    @abstractmethod
    def survival(self, x): ...

    @abstractmethod
    def laplace(self, s: float) -> float: ...

    @abstractmethod
    def laplace_deriv(self, s: float) -> float: ...

    @abstractmethod
    def conv_log_density(self, n: int, z): ...

    @abstractmethod
    def tail_quantile(self, eps: float) -> float:
        """Point beyond which the survival function is at most ``eps``."""

    @abstractmethod
    def conv_tail_quantile(self, n: int, eps: float) -> float:
        """Tail quantile of the n-fold convolution (upper bound is fine)."""

    @abstractmethod
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray: ...

    @abstractmethod
    def describe(self) -> str: ...

    def conv_density(self, n: int, z):
        with np.errstate(over="ignore"):
            return np.exp(self.conv_log_density(n, z))

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def tail_log_slope(self) -> float | None:
        """Asymptotic decay rate of the density, or None if support is compact."""
        return None


def _as_positive_axis(x):
    """Return (array, mask of x > 0)."""
    arr = np.asarray(x, dtype=float)
    return arr, arr > 0.0


@dataclass(frozen=True)
class Exponential(ClaimDistribution):
    """Exponential claim sizes with rate ``mu`` (mean ``1/mu``)."""

    mu: float

    def __post_init__(self):
        _require_finite(mu=self.mu)
        if self.mu <= 0:
            raise InvalidParameter("mu must be > 0")

    @property
    def mean(self):
        return 1.0 / self.mu

    @property
    def variance(self):
        return 1.0 / self.mu**2

    def density(self, x):
        arr, ok = _as_positive_axis(x)
        out = np.where(ok, self.mu * np.exp(-self.mu * np.where(ok, arr, 0.0)), 0.0)
        return out if out.ndim else float(out)

    def log_density(self, x):
        arr, ok = _as_positive_axis(x)
        out = np.where(ok, math.log(self.mu) - self.mu * arr, -np.inf)
        return out if out.ndim else float(out)

    def survival(self, x):
        arr = np.asarray(x, dtype=float)
        out = np.where(arr <= 0.0, 1.0, np.exp(-self.mu * np.maximum(arr, 0.0)))
        return out if out.ndim else float(out)

    def laplace(self, s):
        return self.mu / (self.mu + s)

    def laplace_deriv(self, s):
        return -self.mu / (self.mu + s) ** 2

    def conv_log_density(self, n, z):
        # n-fold convolution is Erlang(n, mu).
        return _erlang_log_density(n, self.mu, z)

    def tail_quantile(self, eps):
        return -math.log(eps) / self.mu

    def conv_tail_quantile(self, n, eps):
        return float(stats.gamma.isf(eps, n, scale=1.0 / self.mu))

    def tail_log_slope(self):
        return self.mu

    def sample(self, rng, size):
        return rng.exponential(1.0 / self.mu, size)

    def describe(self):
        return f"exponential(mu={self.mu:g})"


def _erlang_log_density(shape, rate, z):
    arr, ok = _as_positive_axis(z)
    safe = np.where(ok, arr, 1.0)
    out = np.where(
        ok,
        shape * math.log(rate) + (shape - 1) * np.log(safe) - rate * safe
        - special.gammaln(shape),
        -np.inf,
    )
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Erlang(ClaimDistribution):
    """Erlang claim sizes: shape ``k`` and rate ``mu`` (mean ``k/mu``)."""

    k: int
    mu: float

    def __post_init__(self):
        _require_finite(mu=self.mu)
        if not (isinstance(self.k, (int, np.integer)) and self.k >= 1):
            raise InvalidParameter("k must be an integer >= 1")
        if self.mu <= 0:
            raise InvalidParameter("mu must be > 0")

    @property
    def mean(self):
        return self.k / self.mu

    @property
    def variance(self):
        return self.k / self.mu**2

    def density(self, x):
        with np.errstate(over="ignore"):
            out = np.exp(self.log_density(x))
        return out

    def log_density(self, x):
        return _erlang_log_density(self.k, self.mu, x)

    def survival(self, x):
        arr = np.asarray(x, dtype=float)
        out = np.where(arr <= 0.0, 1.0,
                       special.gammaincc(self.k, self.mu * np.maximum(arr, 0.0)))
        return out if out.ndim else float(out)

    def laplace(self, s):
        return (self.mu / (self.mu + s)) ** self.k

    def laplace_deriv(self, s):
        return -self.k * self.mu**self.k / (self.mu + s) ** (self.k + 1)

    def conv_log_density(self, n, z):
        return _erlang_log_density(n * self.k, self.mu, z)

    def tail_quantile(self, eps):
        return float(stats.gamma.isf(eps, self.k, scale=1.0 / self.mu))

    def conv_tail_quantile(self, n, eps):
        return float(stats.gamma.isf(eps, n * self.k, scale=1.0 / self.mu))

    def tail_log_slope(self):
        return self.mu

    def sample(self, rng, size):
        return rng.gamma(self.k, 1.0 / self.mu, size)

    def describe(self):
        return f"erlang(k={self.k}, mu={self.mu:g})"


@dataclass(frozen=True)
class HyperExponential(ClaimDistribution):
    """Mixture of exponentials: weights ``w`` over component rates ``mu``.

    Closed forms cover density, survival, transform, and moments; n-fold
    convolutions fall back to the spectral grid machinery (the mixture has no
    numerically stable closed-form convolution), discretized once on first
    use.
    """

    weights: tuple
    rates: tuple
    _grid: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.rates, dtype=float)
        if w.shape != mu.shape or w.ndim != 1 or len(w) == 0:
            raise InvalidParameter("weights and rates must be 1-d, same length")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(mu))):
            raise InvalidParameter("weights and rates must be finite")
        if np.any(w <= 0) or np.any(mu <= 0):
            raise InvalidParameter("weights and rates must be positive")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InvalidParameter("weights must sum to 1")
        object.__setattr__(self, "weights", tuple(float(v) for v in w))
        object.__setattr__(self, "rates", tuple(float(v) for v in mu))

    def _w(self):
        return np.asarray(self.weights), np.asarray(self.rates)

    @property
    def mean(self):
        w, mu = self._w()
        return float(np.sum(w / mu))

    @property
    def variance(self):
        w, mu = self._w()
        return float(np.sum(2.0 * w / mu**2) - self.mean**2)

    def density(self, x):
        arr, ok = _as_positive_axis(x)
        w, mu = self._w()
        vals = np.sum(w * mu * np.exp(-np.multiply.outer(np.where(ok, arr, 0.0), mu)),
                      axis=-1)
        out = np.where(ok, vals, 0.0)
        return out if out.ndim else float(out)

    def log_density(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.density(x))

    def survival(self, x):
        arr = np.asarray(x, dtype=float)
        w, mu = self._w()
        vals = np.sum(w * np.exp(-np.multiply.outer(np.maximum(arr, 0.0), mu)),
                      axis=-1)
        out = np.where(arr <= 0.0, 1.0, vals)
        return out if out.ndim else float(out)

    def laplace(self, s):
        w, mu = self._w()
        return float(np.sum(w * mu / (mu + s)))

    def laplace_deriv(self, s):
        w, mu = self._w()
        return float(-np.sum(w * mu / (mu + s) ** 2))

    def _grid_form(self) -> "TabulatedDensity":
        # Write-once cache: the discretization that backs convolutions.
        if not self._grid:
            mu_min = min(self.rates)
            step = min(5e-4, 5e-4 / max(self.rates))
            x_max = -math.log(1e-14) / mu_min
            self._grid.append(discretize(self, step=step, x_max=x_max))
        return self._grid[0]

    def conv_log_density(self, n, z):
        if n == 1:
            return self.log_density(z)
        return self._grid_form().conv_log_density(n, z)

    def tail_quantile(self, eps):
        # The mixture is stochastically dominated by its slowest component.
        return -math.log(eps) / min(self.rates)

    def conv_tail_quantile(self, n, eps):
        return float(stats.gamma.isf(eps, n, scale=1.0 / min(self.rates)))

    def tail_log_slope(self):
        return min(self.rates)

    def sample(self, rng, size):
        w, mu = self._w()
        comp = rng.choice(len(w), size=size, p=w)
        return rng.exponential(1.0, size) / mu[comp]

    def describe(self):
        w = ",".join(f"{v:g}" for v in self.weights)
        mu = ",".join(f"{v:g}" for v in self.rates)
        return f"hyperexponential(weights=[{w}], rates=[{mu}])"


@dataclass(frozen=True)
class TabulatedDensity(ClaimDistribution):
    """Claim density sampled on a uniform grid ``x_j = j * step``.

    Values between grid points are linearly interpolated; the density is zero
    beyond the grid.  Convolution powers are computed spectrally with
    trapezoidal boundary weights and cached per order.
    """

    step: float
    values: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or len(vals) < 8:
            raise InvalidParameter("values must be a 1-d array with >= 8 points")
        if not np.all(np.isfinite(vals)):
            raise InvalidParameter("density values must be finite")
        if np.any(vals < 0):
            raise InvalidParameter("density values must be >= 0")
        if not (math.isfinite(self.step) and self.step > 0):
            raise InvalidParameter("step must be > 0")
        object.__setattr__(self, "values", vals)
        total = float(np.trapezoid(vals, dx=self.step))
        if abs(total - 1.0) > _MASS_TOL_GRID:
            raise InvalidParameter(
                f"tabulated density integrates to {total:.8f}, not 1 "
                f"(tolerance {_MASS_TOL_GRID:g})"
            )

    # -- grid helpers ---------------------------------------------------

    @property
    def grid(self) -> np.ndarray:
        return self.step * np.arange(len(self.values))

    @property
    def support_hi(self) -> float:
        return self.step * (len(self.values) - 1)

    def _moments(self):
        if "moments" not in self._cache:
            x = self.grid
            m1 = float(np.trapezoid(x * self.values, dx=self.step))
            m2 = float(np.trapezoid(x**2 * self.values, dx=self.step))
            self._cache["moments"] = (m1, m2)
        return self._cache["moments"]

    @property
    def mean(self):
        return self._moments()[0]

    @property
    def variance(self):
        m1, m2 = self._moments()
        return m2 - m1**2

    def density(self, x):
        arr = np.asarray(x, dtype=float)
        out = np.interp(arr, self.grid, self.values, left=0.0, right=0.0)
        out = np.where(arr <= 0.0, 0.0, out)
        return out if out.ndim else float(out)

    def log_density(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.density(x))

    def _survival_table(self):
        if "survival" not in self._cache:
            mids = 0.5 * (self.values[:-1] + self.values[1:]) * self.step
            tail = np.concatenate([np.cumsum(mids[::-1])[::-1], [0.0]])
            self._cache["survival"] = tail
        return self._cache["survival"]

    def survival(self, x):
        arr = np.asarray(x, dtype=float)
        out = np.interp(arr, self.grid, self._survival_table(),
                        left=None, right=0.0)
        out = np.where(arr <= 0.0, 1.0, np.clip(out, 0.0, 1.0))
        return out if out.ndim else float(out)

    def laplace(self, s):
        return float(np.trapezoid(np.exp(-s * self.grid) * self.values,
                                  dx=self.step))

    def laplace_deriv(self, s):
        return float(-np.trapezoid(self.grid * np.exp(-s * self.grid)
                                   * self.values, dx=self.step))

    def _conv_values(self, n: int) -> np.ndarray:
        key = ("conv", n)
        if key not in self._cache:
            m = len(self.values)
            out_len = min(n * (m - 1) + 1, 1 << 22)
            # Trapezoidal convolution quadrature: halve every factor's first
            # sample, convolve spectrally, scale by step**(n-1).
            base = self.values.copy()
            base[0] *= 0.5
            nfft = int(2 ** math.ceil(math.log2(out_len + m)))
            spec = np.fft.rfft(base, nfft)
            conv = np.fft.irfft(spec**n, nfft)[:out_len] * self.step ** (n - 1)
            np.clip(conv, 0.0, None, out=conv)  # FFT ringing at the 1e-16 level
            self._cache[key] = conv
        return self._cache[key]

    def conv_log_density(self, n, z):
        if n == 1:
            return self.log_density(z)
        conv = self._conv_values(n)
        arr = np.asarray(z, dtype=float)
        grid = self.step * np.arange(len(conv))
        out = np.interp(arr, grid, conv, left=0.0, right=0.0)
        out = np.where(arr <= 0.0, 0.0, out)
        with np.errstate(divide="ignore"):
            logs = np.log(out)
        return logs if logs.ndim else float(logs)

    def tail_quantile(self, eps):
        tail = self._survival_table()
        idx = int(np.searchsorted(-tail, -eps))
        return float(self.step * min(idx, len(tail) - 1))

    def conv_tail_quantile(self, n, eps):
        if n == 1:
            return self.tail_quantile(eps)
        conv = self._conv_values(n)
        mids = 0.5 * (conv[:-1] + conv[1:]) * self.step
        tail = np.concatenate([np.cumsum(mids[::-1])[::-1], [0.0]])
        idx = int(np.searchsorted(-tail, -eps))
        return float(self.step * min(idx, len(tail) - 1))

    def _cdf_table(self):
        if "cdf" not in self._cache:
            mids = 0.5 * (self.values[:-1] + self.values[1:]) * self.step
            cdf = np.concatenate([[0.0], np.cumsum(mids)])
            self._cache["cdf"] = cdf / cdf[-1]
        return self._cache["cdf"]

    def sample(self, rng, size):
        return np.interp(rng.random(size), self._cdf_table(), self.grid)

    def describe(self):
        return (f"tabulated(step={self.step:g}, points={len(self.values)}, "
                f"mean={self.mean:.6g})")


def discretize(dist: ClaimDistribution, step: float,
               x_max: float | None = None) -> TabulatedDensity:
    """Sample a closed-form law onto a uniform grid (testing and mixtures)."""
    if x_max is None:
        x_max = dist.tail_quantile(1e-14)
    n = int(math.ceil(x_max / step)) + 1
    grid = step * np.arange(n)
    grid[0] = step * 1e-12  # sample the density's right-limit at the origin
    return TabulatedDensity(step=step, values=np.asarray(dist.density(grid)))


def tabulated_from_csv(path) -> TabulatedDensity:
    """Load a two-column ``x, p(x)`` CSV with uniform, strictly increasing x.

    An origin at a positive multiple of the step is zero-padded down to 0.
    """
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.ndim != 2 or data.shape[1] != 2:
        raise InvalidParameter("claims CSV must have exactly two columns")
    x, p = data[:, 0], data[:, 1]
    if len(x) < 8:
        raise InvalidParameter("claims CSV needs at least 8 rows")
    steps = np.diff(x)
    if np.any(steps <= 0):
        raise InvalidParameter("claims CSV x column must be strictly increasing")
    h = float(np.median(steps))
    if np.max(np.abs(steps - h)) > 1e-9 * max(1.0, abs(h)):
        raise InvalidParameter("claims CSV x column must be uniformly spaced")
    offset = x[0] / h
    if abs(offset - round(offset)) > 1e-6:
        raise InvalidParameter("claims CSV origin must be a multiple of the step")
    pad = int(round(offset))
    values = np.concatenate([np.zeros(pad), p])
    return TabulatedDensity(step=h, values=values)


# -- Operation wrappers (argument validation per the call contracts) -----


def claim_density(dist: ClaimDistribution, x: float) -> float:
    """Density ``p(x)`` for ``x > 0``."""
    if not x > 0:
        raise DomainError("claim_density requires x > 0")
    return float(dist.density(x))


def claim_survival(dist: ClaimDistribution, x: float) -> float:
    """Survival ``P(X > x)`` for ``x >= 0``."""
    if x < 0:
        raise DomainError("claim_survival requires x >= 0")
    return float(dist.survival(x))


def claim_laplace(dist: ClaimDistribution, s: float) -> float:
    """Laplace transform ``E[exp(-s X)]`` for ``s >= 0``."""
    if s < 0:
        raise DomainError("claim_laplace requires s >= 0")
    return float(dist.laplace(s))


def claim_convolution(dist: ClaimDistribution, n: int, z: float) -> float:
    """Density of the sum of ``n`` independent claims at ``z > 0``."""
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise DomainError("claim_convolution requires integer n >= 1")
    if not z > 0:
        raise DomainError("claim_convolution requires z > 0")
    return float(dist.conv_density(n, z))
