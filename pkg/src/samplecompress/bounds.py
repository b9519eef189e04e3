"""Sample-compression generalization bounds.

Every function here is a pure function of its arguments. Binomial
coefficients, tail sums and the P2L defining function are evaluated in
log-space, since coefficients such as C(10597, 92) overflow a double.
All inversions use bracketed bisection.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import gammaln, logsumexp, xlog1py, xlogy

MAX_BISECT_ITER = 200
# kl(q, .) is steep near 1, so kl_inv bisects down to float resolution
# (60 halvings of [0, 1] reach 2**-60 < 1e-12)
KL_INV_TOL = 0.0
KL_INV_MAX_ITER = 60
TAIL_INV_TOL = 1e-10
P2L_TOL = 1e-10
P2L_EPS_CEIL = 1.0 - 1e-12


class BoundDomainError(ValueError):
    """Raised when bound inputs fall outside the domain of a bound."""


class BoundKind(str, enum.Enum):
    KL = "KlBound"
    LINEAR = "LinearBound"
    BINOMIAL_APPROX = "BinomialApprox"
    BINOMIAL_TAIL_INV = "BinomialTailInv"
    P2L = "P2LBound"


@dataclass(frozen=True)
class BoundInputs:
    """What a certificate is computed from.

    ``loss_complement`` is the mean per-sample loss on the points outside
    the compression set; ``msg_prob`` is the prior probability of the
    message (1 for the empty message used by P2L).
    """

    n: int
    m: int
    loss_complement: float
    delta: float = 0.01
    msg_prob: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise BoundDomainError(f"n must be a positive integer, got {self.n}")
        if int(self.m) != self.m or not 0 <= self.m <= self.n:
            raise BoundDomainError(f"m must be an integer in [0, n], got {self.m}")
        if not 0.0 < self.delta <= 1.0:
            raise BoundDomainError(f"delta must lie in (0, 1], got {self.delta}")
        if not 0.0 < self.msg_prob <= 1.0:
            raise BoundDomainError(f"msg_prob must lie in (0, 1], got {self.msg_prob}")
        if not (self.loss_complement >= 0.0 and math.isfinite(self.loss_complement)):
            raise BoundDomainError(
                f"loss_complement must be finite and >= 0, got {self.loss_complement}"
            )

    @property
    def n_complement(self) -> int:
        return self.n - self.m


@dataclass(frozen=True)
class Certificate:
    kind: BoundKind
    value: float
    inputs: BoundInputs
    scale: float = 1.0
    vacuous: bool = False
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind.value,
            "value": self.value,
            "n": self.inputs.n,
            "m": self.inputs.m,
            "loss_complement": self.inputs.loss_complement,
            "delta": self.inputs.delta,
            "msg_prob": self.inputs.msg_prob,
            "scale": self.scale,
        }
        if self.vacuous:
            out["vacuous"] = True
        if self.params:
            out["params"] = dict(self.params)
        return out


@dataclass(frozen=True)
class ComparatorSpec:
    """A comparator function together with a bound on its log moment term.

    ``log_moment_bound(m)`` must upper-bound ``log E exp(m * Delta(emp, true))``
    over a fresh sample of size ``m``.
    """

    name: str
    log_moment_bound: Callable[[int], float]
    lam: float | None = None
    sigma: float | None = None

    @classmethod
    def kl(cls) -> "ComparatorSpec":
        return cls("kl", lambda m: math.log(2.0 * math.sqrt(m)))

    @classmethod
    def linear(cls, lam: float, sigma: float) -> "ComparatorSpec":
        if not (lam > 0 and sigma > 0):
            raise BoundDomainError(f"linear comparator needs lam > 0 and sigma > 0, got {lam}, {sigma}")
        return cls(
            "linear",
            lambda m: m * lam * lam * sigma * sigma / 2.0,
            lam=lam,
            sigma=sigma,
        )

    @classmethod
    def custom(cls, log_moment_bound: Callable[[int], float], name: str = "custom") -> "ComparatorSpec":
        return cls(name, log_moment_bound)


# ---------------------------------------------------------------------------
# elementary pieces


def _check_count(name, v):
    if int(v) != v or v < 0:
        raise BoundDomainError(f"{name} must be a non-negative integer, got {v}")


def log_choose(n: int, k: int) -> float:
    """ln C(n, k) via log-gamma."""
    _check_count("n", n)
    _check_count("k", k)
    if k > n:
        raise BoundDomainError(f"k={k} exceeds n={n}")
    if k == 0 or k == n:
        return 0.0
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def _log_choose_vec(n, k):
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def zeta_prior(m: int) -> float:
    """Prior weight 6 / (pi^2 (m+1)^2) over compression-set sizes."""
    return 6.0 / (math.pi**2 * (m + 1) ** 2)


def _log_zeta(m):
    return math.log(6.0) - 2.0 * math.log(math.pi) - 2.0 * math.log(m + 1)


def kl_div(q: float, p: float) -> float:
    """Binary KL divergence kl(q || p), with 0 ln 0 = 0.

    Returns ``inf`` when ``p`` sits on a boundary that ``q`` does not.
    """
    if not (0.0 <= q <= 1.0 and 0.0 <= p <= 1.0):
        raise BoundDomainError(f"kl_div needs q, p in [0, 1], got q={q}, p={p}")
    if (p == 0.0 and q > 0.0) or (p == 1.0 and q < 1.0):
        return math.inf
    out = 0.0
    if q > 0.0:
        out += q * math.log(q / p)
    if q < 1.0:
        out += (1.0 - q) * math.log((1.0 - q) / (1.0 - p))
    return max(out, 0.0)


def _bisect_sup(feasible, lo, hi, tol, max_iter):
    """Largest x in [lo, hi] with ``feasible(x)``, assuming a single switch.

    ``lo`` must be feasible; returns the feasible end of the final bracket.
    """
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def kl_inv(q: float, eps: float) -> float:
    """sup{p in [q, 1] : kl(q, p) <= eps}."""
    if not 0.0 <= q <= 1.0:
        raise BoundDomainError(f"kl_inv needs q in [0, 1], got {q}")
    if eps < 0 or math.isnan(eps):
        raise BoundDomainError(f"kl_inv needs eps >= 0, got {eps}")
    if q >= 1.0:
        return 1.0
    if eps == 0.0:
        return q
    return _bisect_sup(lambda p: kl_div(q, p) <= eps, q, 1.0, KL_INV_TOL, KL_INV_MAX_ITER)


def log_binomial_cdf(k: int, m: int, r: float) -> float:
    """ln P[Bin(m, r) <= k]."""
    i = np.arange(k + 1, dtype=float)
    terms = _log_choose_vec(m, i) + xlogy(i, r) + xlog1py(m - i, -r)
    return float(logsumexp(terms))


def binomial_tail_inv(k: int, m: int, delta: float) -> float:
    """sup{r in [0, 1] : P[Bin(m, r) <= k] >= delta}."""
    _check_count("k", k)
    _check_count("m", m)
    if m < 1 or k > m:
        raise BoundDomainError(f"binomial_tail_inv needs 0 <= k <= m, m >= 1; got k={k}, m={m}")
    if not 0.0 < delta <= 1.0:
        raise BoundDomainError(f"delta must lie in (0, 1], got {delta}")
    if k == m:
        return 1.0
    log_delta = math.log(delta)
    return _bisect_sup(lambda r: log_binomial_cdf(k, m, r) >= log_delta,
                       0.0, 1.0, TAIL_INV_TOL, MAX_BISECT_ITER)


def maurer_sum(m: int) -> float:
    """sum_k C(m, k) (k/m)^k (1 - k/m)^(m - k), with 0^0 = 1."""
    _check_count("m", m)
    if m < 1:
        raise BoundDomainError("maurer_sum needs m >= 1")
    k = np.arange(m + 1, dtype=float)
    frac = k / m
    terms = _log_choose_vec(m, k) + xlogy(k, frac) + xlog1py(m - k, -frac)
    return float(np.exp(logsumexp(terms)))


# ---------------------------------------------------------------------------
# compression bounds


def _log_confidence(inputs: BoundInputs) -> float:
    """ln C(n, m) + ln(1 / (zeta(m) * msg_prob * delta))."""
    return (
        log_choose(inputs.n, inputs.m)
        - _log_zeta(inputs.m)
        - math.log(inputs.msg_prob)
        - math.log(inputs.delta)
    )


def generic_compression_bound(inputs: BoundInputs, comp: ComparatorSpec) -> float:
    """Right-hand side of the comparator bound: an upper bound on
    Delta(empirical complement loss, true loss)."""
    nc = inputs.n_complement
    if nc < 1:
        raise BoundDomainError("the complement set is empty (m == n)")
    log_moment = comp.log_moment_bound(nc)
    if not math.isfinite(log_moment):
        raise BoundDomainError(f"log moment bound is not finite at m={nc}")
    return (log_choose(inputs.n, inputs.m) + log_moment
            - _log_zeta(inputs.m) - math.log(inputs.msg_prob) - math.log(inputs.delta)) / nc


def kl_compression_bound(inputs: BoundInputs) -> Certificate:
    q = inputs.loss_complement
    if q > 1.0:
        raise BoundDomainError(f"kl bound needs a loss in [0, 1], got {q}")
    if inputs.m == inputs.n:
        return Certificate(BoundKind.KL, 1.0, inputs, vacuous=True)
    eps = generic_compression_bound(inputs, ComparatorSpec.kl())
    value = kl_inv(q, eps)
    return Certificate(BoundKind.KL, value, inputs, params={"eps": eps})


def rescaled_kl_bound(inputs: BoundInputs, loss_max: float) -> Certificate:
    """kl bound for a loss in [0, loss_max]: rescale, bound, scale back."""
    if not loss_max > 0:
        raise BoundDomainError(f"loss_max must be positive, got {loss_max}")
    if inputs.loss_complement > loss_max:
        raise BoundDomainError(
            f"loss_complement {inputs.loss_complement} exceeds loss_max {loss_max}"
        )
    unit = kl_compression_bound(replace(inputs, loss_complement=inputs.loss_complement / loss_max))
    return Certificate(
        BoundKind.KL,
        loss_max * unit.value,
        inputs,
        scale=loss_max,
        vacuous=unit.vacuous,
        params=unit.params,
    )


def linear_compression_bound(
    inputs: BoundInputs, lam: float, sigma: float, loss_max: float | None = None
) -> Certificate:
    """Linear-comparator bound for a sigma^2-sub-Gaussian loss at fixed lam.

    ``lam`` must be chosen without looking at the data. When ``loss_max``
    is given the value is capped there (the loss cannot exceed it).
    """
    comp = ComparatorSpec.linear(lam, sigma)
    if inputs.m == inputs.n:
        return Certificate(BoundKind.LINEAR, math.inf if loss_max is None else loss_max,
                           inputs, scale=loss_max or 1.0, vacuous=True)
    value = inputs.loss_complement + generic_compression_bound(inputs, comp) / lam
    vacuous = False
    if loss_max is not None and value >= loss_max:
        value, vacuous = loss_max, True
    return Certificate(
        BoundKind.LINEAR,
        value,
        inputs,
        scale=loss_max or 1.0,
        vacuous=vacuous,
        params={"lambda": lam, "sigma": sigma},
    )


def lambda_grid(size: int = 20, lam_min: float = 1e-4, lam_max: float = 10.0) -> np.ndarray:
    if size < 1 or not 0 < lam_min <= lam_max:
        raise BoundDomainError("lambda grid needs size >= 1 and 0 < lam_min <= lam_max")
    return np.geomspace(lam_min, lam_max, size)


def linear_compression_bound_grid(
    inputs: BoundInputs,
    sigma: float,
    grid_size: int = 20,
    lam_min: float = 1e-4,
    lam_max: float = 10.0,
    loss_max: float | None = None,
) -> Certificate:
    """Best linear bound over a fixed geometric lambda grid.

    Each grid point is certified at confidence delta / grid_size, so the
    minimum is valid by a union bound.
    """
    split = replace(inputs, delta=inputs.delta / grid_size)
    best = None
    for lam in lambda_grid(grid_size, lam_min, lam_max):
        cert = linear_compression_bound(split, float(lam), sigma, loss_max)
        if best is None or cert.value < best.value:
            best = cert
    return Certificate(
        BoundKind.LINEAR,
        best.value,
        inputs,
        scale=best.scale,
        vacuous=best.vacuous,
        params={**best.params, "grid_size": grid_size},
    )


def error_count(inputs: BoundInputs) -> int:
    """Number of complement errors implied by a mean zero-one loss."""
    return int(round(inputs.loss_complement * inputs.n_complement))


def binomial_approx_bound(inputs: BoundInputs) -> Certificate:
    """Closed-form binomial approximation for the zero-one loss."""
    if inputs.loss_complement > 1.0:
        raise BoundDomainError("binomial bounds need a zero-one loss in [0, 1]")
    nc = inputs.n_complement
    kappa = error_count(inputs)
    if kappa >= nc:
        raise BoundDomainError(f"degenerate input: kappa={kappa} >= n - m={nc}, bound is vacuous")
    exponent = (log_choose(nc, kappa) + _log_confidence(inputs)) / (nc - kappa)
    value = -math.expm1(-exponent)
    return Certificate(BoundKind.BINOMIAL_APPROX, value, inputs, params={"kappa": kappa})


def binomial_tail_bound(inputs: BoundInputs) -> Certificate:
    """Exact binomial tail inversion at confidence zeta(m) P delta / C(n, m)."""
    if inputs.loss_complement > 1.0:
        raise BoundDomainError("binomial bounds need a zero-one loss in [0, 1]")
    nc = inputs.n_complement
    if nc < 1:
        return Certificate(BoundKind.BINOMIAL_TAIL_INV, 1.0, inputs, vacuous=True)
    kappa = error_count(inputs)
    log_conf = -_log_confidence(inputs)
    if log_conf < math.log(np.finfo(float).tiny):
        raise BoundDomainError("confidence level underflows; use binomial_approx_bound")
    value = binomial_tail_inv(kappa, nc, math.exp(log_conf))
    return Certificate(BoundKind.BINOMIAL_TAIL_INV, value, inputs, params={"kappa": kappa})


# ---------------------------------------------------------------------------
# P2L consistent-case bound


def _p2l_log_terms(k: int, n: int, delta: float, horizon: int):
    """Log coefficients and exponents of the P2L defining function.

    psi(eps) = sum_j exp(coef_j + power_j * ln(1 - eps)).
    """
    lc_n = log_choose(n, k)
    j1 = np.arange(k, n, dtype=float)
    j2 = np.arange(n + 1, 4 * horizon + 1, dtype=float)
    coef = np.concatenate([
        math.log(delta / (2 * horizon)) + _log_choose_vec(j1, k) - lc_n,
        math.log(delta / (6 * horizon)) + _log_choose_vec(j2, k) - lc_n,
    ])
    power = np.concatenate([-(n - j1), j2 - n])
    return coef, power


def p2l_log_psi(eps: float, k: int, n: int, delta: float, horizon: int | None = None) -> float:
    """ln psi_{k,delta}(eps); ``horizon`` is N in the defining sums (default n)."""
    coef, power = _p2l_log_terms(k, n, delta, n if horizon is None else horizon)
    return float(logsumexp(coef + power * math.log1p(-eps)))


def p2l_bound(m: int, n: int, delta: float = 0.01, horizon: int | None = None) -> Certificate:
    """Consistent-case P2L bound: root of psi_{m,delta}(eps) = 1 on [m/n, 1].

    ``horizon`` is the N appearing in the defining function. It defaults
    to the number of P2L iterations that produced a size-``m`` compression
    set with single-point picks, i.e. ``m`` (floored at 1); pass ``n`` for
    the sample-size reading, which is more conservative.
    """
    inputs = BoundInputs(n=n, m=m, loss_complement=0.0, delta=delta)
    if not 0.0 < delta < 1.0:
        raise BoundDomainError(f"p2l bound needs delta in (0, 1), got {delta}")
    if m == n:
        return Certificate(BoundKind.P2L, 1.0, inputs)
    N = max(int(m if horizon is None else horizon), 1)
    coef, power = _p2l_log_terms(m, n, delta, N)

    def log_psi(eps):
        return float(logsumexp(coef + power * math.log1p(-eps)))

    lo, hi = m / n, P2L_EPS_CEIL
    params = {"horizon": N}
    # psi increases in eps: below 1 at the left end, above 1 near eps = 1
    if not (log_psi(lo) <= 0.0 <= log_psi(hi)):
        return Certificate(BoundKind.P2L, 1.0, inputs, vacuous=True, params=params)
    for _ in range(MAX_BISECT_ITER):
        if hi - lo <= P2L_TOL:
            break
        mid = 0.5 * (lo + hi)
        if log_psi(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    return Certificate(BoundKind.P2L, hi, inputs, params=params)
