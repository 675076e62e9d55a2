"""Privacy-loss-distribution accounting for (subsampled) Gaussian releases.

The privacy loss of one release is a random variable; losses of composed
releases add, so their densities convolve. We discretize each loss density
onto a fixed grid, rounding losses up (pessimistic) so that every reported
epsilon is a valid upper bound, convolve with FFTs, and invert the resulting
delta(epsilon) curve.

Conventions: add/remove adjacency; the subsampled mechanism compares the
mixture (1-q) P0 + q P1 against P0 (remove direction). Mass beyond the upper
grid end is tracked separately and charged in full against delta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.signal import fftconvolve
from scipy.special import ndtr, ndtri

from .errors import AccountingError, ParameterError

DEFAULT_GRID_STEP = 1e-4
DEFAULT_TRUNCATION_TAIL = 1e-10
MAX_GRID_POINTS = 40_000_000
_LOSS_RATIO_GUARD = 35.0  # mu above this means epsilon is astronomically large


@dataclass(frozen=True)
class PrivacyLossDistribution:
    """Discretized loss density: mass[i] sits at grid_start + i * grid_step."""

    grid_start: float
    grid_step: float
    mass: np.ndarray
    truncated_mass: float

    def __post_init__(self) -> None:
        mass = np.asarray(self.mass, dtype=np.float64).copy()
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)
        if self.grid_step <= 0.0:
            raise ParameterError("grid_step must be positive")
        if self.truncated_mass < 0.0:
            raise ParameterError("truncated_mass must be nonnegative")

    def grid(self) -> np.ndarray:
        return self.grid_start + self.grid_step * np.arange(self.mass.shape[0])

    def total_mass(self) -> float:
        return float(self.mass.sum() + self.truncated_mass)

    def start_index(self) -> int:
        return int(round(self.grid_start / self.grid_step))


@dataclass(frozen=True)
class AccountantQuery:
    target_delta: float

    def __post_init__(self) -> None:
        if not 0.0 < self.target_delta < 1.0:
            raise ParameterError("target delta must lie in (0, 1)")


def _discretize_from_cdf(cdf, lo: float, hi: float, grid_step: float) -> tuple[int, np.ndarray, float]:
    """Pessimistic (round-up) bucketing of a loss CDF onto the integer grid.

    Mass below the first grid point folds up into it; mass above the last
    point becomes truncated mass. Returns (start_index, mass, truncated).
    """
    i_lo = math.ceil(lo / grid_step - 1e-12)
    i_hi = max(math.ceil(hi / grid_step), i_lo)
    npoints = i_hi - i_lo + 1
    if npoints > MAX_GRID_POINTS:
        raise AccountingError(
            f"loss grid would need {npoints} points; increase grid_step or sigma"
        )
    grid = (np.arange(i_lo, i_hi + 1)) * grid_step
    cdf_vals = cdf(grid)
    mass = np.empty(npoints)
    mass[0] = cdf_vals[0]
    mass[1:] = np.diff(cdf_vals)
    np.maximum(mass, 0.0, out=mass)
    truncated = max(1.0 - float(cdf_vals[-1]), 0.0)
    return i_lo, mass, truncated


def gaussian_pld(
    sensitivity: float,
    sigma: float,
    grid_step: float = DEFAULT_GRID_STEP,
    truncation_tail: float = DEFAULT_TRUNCATION_TAIL,
) -> PrivacyLossDistribution:
    """PLD of the Gaussian mechanism: loss ~ N(mu^2/2, mu^2), mu = sens/sigma."""
    _check_pld_args(sensitivity, sigma, grid_step, truncation_tail)
    mu = sensitivity / sigma
    if mu > _LOSS_RATIO_GUARD:
        raise AccountingError(f"sensitivity/sigma = {mu:.2f} is too large to discretize")
    z = -ndtri(truncation_tail)  # upper quantile of the standard normal
    mean = 0.5 * mu * mu
    lo = mean - z * mu
    hi = mean + z * mu

    def cdf(l: np.ndarray) -> np.ndarray:
        return ndtr((l - mean) / mu)

    i_lo, mass, truncated = _discretize_from_cdf(cdf, lo, hi, grid_step)
    return PrivacyLossDistribution(i_lo * grid_step, grid_step, mass, truncated)


def subsampled_gaussian_pld(
    sensitivity: float,
    sigma: float,
    q: float,
    grid_step: float = DEFAULT_GRID_STEP,
    truncation_tail: float = DEFAULT_TRUNCATION_TAIL,
) -> PrivacyLossDistribution:
    """PLD of the Poisson-subsampled Gaussian mechanism (remove adjacency).

    The output pair is A = (1-q) N(0, s^2) + q N(d, s^2) versus B = N(0, s^2);
    the loss of an outcome o is log(1 - q + q exp(l0(o))) where l0 is the
    plain Gaussian loss, so it is a monotone map of o and the CDF follows by
    inverting it.
    """
    _check_pld_args(sensitivity, sigma, grid_step, truncation_tail)
    if not 0.0 < q <= 1.0:
        raise ParameterError("subsampling rate q must lie in (0, 1]")
    if q == 1.0:
        return gaussian_pld(sensitivity, sigma, grid_step, truncation_tail)
    mu = sensitivity / sigma
    if mu > _LOSS_RATIO_GUARD:
        raise AccountingError(f"sensitivity/sigma = {mu:.2f} is too large to discretize")
    log1mq = math.log1p(-q)
    z = -ndtri(truncation_tail)

    def outcome_of_loss(l: np.ndarray) -> np.ndarray:
        # Invert l = log(1 - q + q e^{l0}); stable near the lower support end.
        d = l - log1mq
        arg = (1.0 - q) * np.expm1(d) / q
        return (sigma / mu) * np.log(arg) + 0.5 * sensitivity

    def cdf(l: np.ndarray) -> np.ndarray:
        o = outcome_of_loss(np.asarray(l, dtype=np.float64))
        return (1.0 - q) * ndtr(o / sigma) + q * ndtr((o - sensitivity) / sigma)

    # The upper component's quantile bounds the mixture's upper tail.
    o_hi = sensitivity + sigma * z
    l0_hi = (mu / sigma) * o_hi - 0.5 * mu * mu
    hi = np.logaddexp(log1mq, math.log(q) + l0_hi)
    lo = log1mq + grid_step  # all loss mass lies strictly above log(1 - q)
    i_lo, mass, truncated = _discretize_from_cdf(cdf, lo, float(hi), grid_step)
    return PrivacyLossDistribution(i_lo * grid_step, grid_step, mass, truncated)


def _convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if min(a.shape[0], b.shape[0]) < 64:
        out = np.convolve(a, b)
    else:
        out = fftconvolve(a, b)
    np.maximum(out, 0.0, out=out)  # FFT rounding can leave tiny negatives
    return out


def _trim(
    start_idx: int, mass: np.ndarray, truncated: float, tail_budget: float
) -> tuple[int, np.ndarray, float]:
    """Bound array growth: fold a tiny lower tail up, truncate a tiny upper tail."""
    n = mass.shape[0]
    csum = np.cumsum(mass)
    total = csum[-1]
    hi_cut = int(np.searchsorted(csum, total - tail_budget, side="left"))
    if hi_cut < n - 1:
        truncated += float(total - csum[hi_cut])
        mass = mass[: hi_cut + 1].copy()
        n = mass.shape[0]
        csum = csum[: hi_cut + 1]
    lo_cut = int(np.searchsorted(csum, tail_budget, side="right"))
    if lo_cut > 0:
        folded = float(csum[lo_cut - 1])
        mass = mass[lo_cut:].copy()
        mass[0] += folded  # moving mass up the grid is pessimistic
        start_idx += lo_cut
    return start_idx, mass, truncated


def _compose_pair(
    a: PrivacyLossDistribution, b: PrivacyLossDistribution, tail_budget: float
) -> PrivacyLossDistribution:
    if abs(a.grid_step - b.grid_step) > 1e-15 * max(a.grid_step, b.grid_step):
        raise ParameterError("compose requires a common grid_step; rebin first")
    h = a.grid_step
    mass = _convolve(a.mass, b.mass)
    truncated = 1.0 - (1.0 - a.truncated_mass) * (1.0 - b.truncated_mass)
    start_idx, mass, truncated = _trim(
        a.start_index() + b.start_index(), mass, truncated, tail_budget
    )
    return PrivacyLossDistribution(start_idx * h, h, mass, truncated)


def _compose_power(
    pld: PrivacyLossDistribution, m: int, tail_budget: float
) -> PrivacyLossDistribution:
    """m-fold self-composition by binary exponentiation of the density."""
    result: PrivacyLossDistribution | None = None
    base = pld
    while m > 0:
        if m & 1:
            result = base if result is None else _compose_pair(result, base, tail_budget)
        m >>= 1
        if m:
            base = _compose_pair(base, base, tail_budget)
    assert result is not None
    return result


def rebin(pld: PrivacyLossDistribution, grid_step: float) -> PrivacyLossDistribution:
    """Pessimistically re-bucket onto a coarser grid (losses round up)."""
    if grid_step < pld.grid_step:
        raise ParameterError("can only rebin onto a coarser grid")
    old = pld.grid()
    new_idx = np.ceil(old / grid_step - 1e-12).astype(np.int64)
    i_lo = int(new_idx.min())
    mass = np.zeros(int(new_idx.max()) - i_lo + 1)
    np.add.at(mass, new_idx - i_lo, pld.mass)
    return PrivacyLossDistribution(i_lo * grid_step, grid_step, mass, pld.truncated_mass)


def compose(plds: list[PrivacyLossDistribution]) -> PrivacyLossDistribution:
    """Convolve the loss densities of independent releases.

    Identical inputs are composed by repeated squaring (FFT); heterogeneous
    inputs fold pairwise. Truncated masses accumulate.
    """
    if not plds:
        raise ParameterError("compose requires at least one distribution")
    coarsest = max(p.grid_step for p in plds)
    plds = [p if p.grid_step == coarsest else rebin(p, coarsest) for p in plds]
    if len(plds) == 1:
        return plds[0]
    tail_budget = min(p.truncated_mass for p in plds)
    tail_budget = max(tail_budget, 1e-15)
    first = plds[0]
    identical = len(plds) >= 8 and all(
        p.grid_start == first.grid_start
        and p.mass.shape == first.mass.shape
        and np.array_equal(p.mass, first.mass)
        and p.truncated_mass == first.truncated_mass
        for p in plds[1:]
    )
    if identical:
        return _compose_power(first, len(plds), tail_budget)
    out = plds[0]
    for nxt in plds[1:]:
        out = _compose_pair(out, nxt, tail_budget)
    return out


def delta_at_epsilon(pld: PrivacyLossDistribution, epsilon: float) -> float:
    """delta(eps) = E[(1 - e^{eps - Y})_+] + truncated mass."""
    grid = pld.grid()
    above = grid > epsilon
    if not above.any():
        return pld.truncated_mass
    g = grid[above]
    m = pld.mass[above]
    return float(np.sum(m) - np.sum(m * np.exp(epsilon - g)) + pld.truncated_mass)


def epsilon_at_delta(pld: PrivacyLossDistribution, query: AccountantQuery | float) -> float:
    """Smallest nonnegative grid epsilon whose pessimistic delta meets the target.

    Raises when the target delta is below the truncated mass; that means the
    grid was too coarse (or the tail too heavy) for this query, so rerun with
    a finer grid or smaller truncation tail.
    """
    delta = query.target_delta if isinstance(query, AccountantQuery) else float(query)
    if not 0.0 < delta < 1.0:
        raise ParameterError("target delta must lie in (0, 1)")
    if delta <= pld.truncated_mass:
        raise AccountingError(
            f"target delta {delta} is not above the truncated mass "
            f"{pld.truncated_mass}; rerun with a finer grid or smaller truncation tail"
        )
    if delta_at_epsilon(pld, 0.0) <= delta:
        return 0.0
    grid = pld.grid()
    lo, hi = 0, grid.shape[0] - 1  # delta at grid[hi] equals truncated mass < delta
    while lo < hi:
        mid = (lo + hi) // 2
        if delta_at_epsilon(pld, float(grid[mid])) <= delta:
            hi = mid
        else:
            lo = mid + 1
    return max(float(grid[lo]), 0.0)


def analytic_gaussian_epsilon(sensitivity: float, sigma: float, delta: float) -> float:
    """Exact epsilon(delta) of the Gaussian mechanism by root finding.

    Uses the exact tradeoff delta(eps) = Phi(mu/2 - eps/mu) - e^eps
    Phi(-mu/2 - eps/mu); this is the independent reference the discretized
    accountant is validated against.
    """
    if sigma <= 0.0 or sensitivity <= 0.0:
        raise ParameterError("sensitivity and sigma must be positive")
    if not 0.0 < delta < 1.0:
        raise ParameterError("delta must lie in (0, 1)")
    mu = sensitivity / sigma

    def delta_of(eps: float) -> float:
        return float(ndtr(mu / 2.0 - eps / mu) - math.exp(eps) * ndtr(-mu / 2.0 - eps / mu))

    if delta_of(0.0) <= delta:
        return 0.0
    hi = 1.0
    while delta_of(hi) > delta:
        hi *= 2.0
        if hi > 1e6:
            raise AccountingError("failed to bracket the analytic epsilon")
    return float(brentq(lambda e: delta_of(e) - delta, 0.0, hi, xtol=1e-12, rtol=1e-12))


@dataclass(frozen=True)
class CalibrationResult:
    sigma: float
    epsilon: float  # composed epsilon actually achieved at this sigma
    mechanisms: int
    q: float
    delta: float
    grid_step: float
    truncated_mass: float

    def report(self) -> dict:
        return {
            "mechanisms": self.mechanisms,
            "sigma": self.sigma,
            "q": self.q,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "grid_step": self.grid_step,
            "truncated_mass": self.truncated_mass,
        }


def composed_epsilon(
    sensitivity: float,
    sigma: float,
    q: float,
    mechanisms: int,
    delta: float,
    grid_step: float = DEFAULT_GRID_STEP,
    truncation_tail: float = DEFAULT_TRUNCATION_TAIL,
) -> tuple[float, PrivacyLossDistribution]:
    """epsilon(delta) for m independent (subsampled) Gaussian releases."""
    if mechanisms < 1:
        raise ParameterError("mechanisms must be at least 1")
    single = subsampled_gaussian_pld(sensitivity, sigma, q, grid_step, truncation_tail)
    composed = (
        single
        if mechanisms == 1
        else _compose_power(single, mechanisms, max(truncation_tail, 1e-15))
    )
    return epsilon_at_delta(composed, AccountantQuery(delta)), composed


def calibrate_sigma_for_budget(
    sensitivity: float,
    epsilon: float,
    delta: float,
    q: float = 1.0,
    mechanisms: int = 1,
    grid_step: float = DEFAULT_GRID_STEP,
    truncation_tail: float = DEFAULT_TRUNCATION_TAIL,
    rel_tol: float = 1e-2,
) -> CalibrationResult:
    """Smallest noise scale whose composed accountant epsilon meets the budget.

    Bisection on sigma against the PLD accountant itself, so the returned
    sigma is guaranteed consistent with the reported (pessimistic) epsilon.
    """
    if epsilon <= 0.0:
        raise ParameterError("epsilon must be positive")
    # Basic composition gives a sufficient (loose) starting noise level.
    per_eps = epsilon / mechanisms
    per_delta = delta / (2.0 * mechanisms)
    hi = sensitivity * math.sqrt(2.0 * math.log(1.25 / per_delta)) / per_eps

    def eps_at(sig: float) -> float:
        if sensitivity / sig > _LOSS_RATIO_GUARD:
            return float("inf")
        try:
            value, _ = composed_epsilon(
                sensitivity, sig, q, mechanisms, delta, grid_step, truncation_tail
            )
        except AccountingError:
            return float("inf")
        return value

    while eps_at(hi) > epsilon:
        hi *= 2.0
        if hi > 1e9 * sensitivity:
            raise AccountingError("failed to bracket a sufficient sigma")
    lo = hi / 2.0
    while lo > sensitivity * 1e-6 and eps_at(lo) <= epsilon:
        hi = lo
        lo /= 2.0
    while hi / lo > 1.0 + rel_tol:
        mid = math.sqrt(lo * hi)
        if eps_at(mid) <= epsilon:
            hi = mid
        else:
            lo = mid
    achieved, composed = composed_epsilon(
        sensitivity, hi, q, mechanisms, delta, grid_step, truncation_tail
    )
    return CalibrationResult(
        sigma=hi,
        epsilon=achieved,
        mechanisms=mechanisms,
        q=q,
        delta=delta,
        grid_step=grid_step,
        truncated_mass=composed.truncated_mass,
    )


def _check_pld_args(sensitivity: float, sigma: float, grid_step: float, tail: float) -> None:
    if sensitivity <= 0.0:
        raise ParameterError("sensitivity must be positive")
    if sigma <= 0.0:
        raise ParameterError("sigma must be positive")
    if grid_step <= 0.0:
        raise ParameterError("grid_step must be positive")
    if not 0.0 < tail < 1.0:
        raise ParameterError("truncation_tail must lie in (0, 1)")
