"""Differentially private score release.

The private TKNN path privatizes the counting triple once per validation
point (three Gaussian draws total) and derives every owner's leave-one-out
triple from that single privatized statistic; releasing all scores this way
is joint-DP and therefore collusion resistant. The KNN baseline adds
independent noise per owner per validation point instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._rng import TAG_NOISE, TAG_SUBSAMPLE, stream
from .dataset import Dataset, distance_matrix, validation_chunks
from .errors import ParameterError
from .knn import KnnConfig, knn_score_matrix, knn_shapley_scores
from .tknn import NeighborCounts, TknnConfig, a2_term, tknn_shapley_from_counts
from .valuation import MethodDescriptor, ValuationResult

COUNTS_SENSITIVITY = math.sqrt(3.0)  # l2 sensitivity of the counting triple


def knn_old_sensitivity(k: int) -> float:
    """Tight global sensitivity of the older KNN-Shapley: 1 / (K (K + 1))."""
    if k < 1:
        raise ParameterError("K must be at least 1")
    return 1.0 / (k * (k + 1))


def calibrate_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
    """Per-mechanism Gaussian noise scale: sigma = sens * sqrt(ln(1.25/delta)) / eps."""
    if sensitivity <= 0.0:
        raise ParameterError("sensitivity must be positive")
    if epsilon <= 0.0:
        raise ParameterError("epsilon must be positive")
    if not 0.0 < delta < 1.0:
        raise ParameterError("delta must lie in (0, 1)")
    return sensitivity * math.sqrt(math.log(1.25 / delta)) / epsilon


@dataclass(frozen=True)
class DpParams:
    """Privacy parameters for one release. Exactly one of epsilon/sigma is set;
    the other is derived through the calibration rule at the point of use."""

    delta: float
    epsilon: float | None = None
    sigma: float | None = None
    q: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ParameterError("delta must lie in (0, 1)")
        if (self.epsilon is None) == (self.sigma is None):
            raise ParameterError("provide exactly one of epsilon and sigma")
        if self.epsilon is not None and self.epsilon <= 0.0:
            raise ParameterError("epsilon must be positive")
        if self.sigma is not None and self.sigma < 0.0:
            raise ParameterError("sigma must be nonnegative")
        if not 0.0 < self.q <= 1.0:
            raise ParameterError("subsampling rate q must lie in (0, 1]")

    def resolve_sigma(self, sensitivity: float) -> float:
        if self.sigma is not None:
            return self.sigma
        return calibrate_sigma(sensitivity, self.epsilon, self.delta)

    def manifest(self, sensitivity: float, draws: int) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "sigma": self.resolve_sigma(sensitivity),
            "q": self.q,
            "seed": self.seed,
            "draws": draws,
        }


@dataclass(frozen=True)
class PrivatizedCounts:
    """Noisy, rounded, clamped counting triple; raw draws kept for audit only."""

    counts: NeighborCounts
    raw_noise_draws: tuple[float, float, float]


def _clamp_counts(c: float, c_x: float, c_zplus: float) -> NeighborCounts:
    # Clamp order keeps the triple self-consistent: c first, then c_x against
    # c + 1, then c_zplus against c_x - 1.
    ci = max(int(c), 0)
    cxi = min(max(int(c_x), 1), ci + 1)
    czi = min(max(int(c_zplus), 0), cxi - 1)
    return NeighborCounts(ci, cxi, czi)


def privatize_counts(
    counts: NeighborCounts,
    sigma: float,
    rng: np.random.Generator | int,
) -> PrivatizedCounts:
    """round(counts + N(0, sigma^2 I_3)), clamped to the valid count ranges."""
    if sigma < 0.0:
        raise ParameterError("sigma must be nonnegative")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    draws = gen.normal(0.0, sigma, 3) if sigma > 0.0 else np.zeros(3)
    noisy = np.rint(np.asarray(counts.as_tuple(), dtype=np.float64) + draws)
    clamped = _clamp_counts(noisy[0], noisy[1], noisy[2])
    return PrivatizedCounts(clamped, (float(draws[0]), float(draws[1]), float(draws[2])))


def _poisson_mask(n: int, q: float, rng: np.random.Generator | int) -> np.ndarray:
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return gen.random(n) < q


def poisson_subsample(ds: Dataset, q: float, rng: np.random.Generator | int) -> Dataset:
    """Keep each point independently with probability q; owners preserved."""
    if not 0.0 < q <= 1.0:
        raise ParameterError("subsampling rate q must lie in (0, 1]")
    if q == 1.0:
        return ds
    return ds.subset(_poisson_mask(ds.n, q, rng))


def privatized_loo_counts(
    priv: PrivatizedCounts,
    in_sampled_neighborhood: bool,
    label_match: bool,
) -> NeighborCounts:
    """Leave-one-out decrements applied to a privatized triple, re-clamped."""
    dec = 1 if in_sampled_neighborhood else 0
    return _clamp_counts(
        priv.counts.c - 1,
        priv.counts.c_x - dec,
        priv.counts.c_zplus - (dec if label_match else 0),
    )


def dp_tknn_score_from_privatized(
    priv: PrivatizedCounts,
    within_threshold: bool,
    in_sampled_neighborhood: bool,
    label_match: bool,
    num_classes: int,
    _a2_cache: dict | None = None,
) -> float:
    """Deterministic post-processing of one privatized triple into one score.

    Any party holding the privatized triple and a point's own attributes can
    reproduce that point's released score bit-for-bit.
    """
    loo = privatized_loo_counts(priv, in_sampled_neighborhood, label_match)
    return tknn_shapley_from_counts(loo, label_match, within_threshold, num_classes, _a2_cache)


def _dp_tknn_row_scores(
    priv: PrivatizedCounts,
    within: np.ndarray,
    in_nb: np.ndarray,
    match: np.ndarray,
    num_classes: int,
    a2_cache: dict[tuple[int, int], float] | None = None,
) -> np.ndarray:
    """Vectorized post-processing of one privatized triple for all owners.

    Mirrors the non-private assembly exactly, so the sigma = 0, q = 1 release
    is bit-identical to the non-private score vector.
    """
    if a2_cache is None:
        a2_cache = {}
    c_loo = max(priv.counts.c - 1, 0)
    dec = in_nb.astype(np.int64)
    cxp = np.clip(priv.counts.c_x - dec, 1, c_loo + 1)
    czp = np.clip(priv.counts.c_zplus - dec * match.astype(np.int64), 0, cxp - 1)
    m = match.astype(np.float64)
    inv_c = 1.0 / num_classes
    # The decrement leaves at most two distinct c_x values across owners.
    lo_val = int(min(max(priv.counts.c_x - 1, 1), c_loo + 1))
    hi_val = int(min(max(priv.counts.c_x, 1), c_loo + 1))
    a2 = np.zeros(within.shape[0])
    for value in {lo_val, hi_val}:
        if value >= 2:
            key = (c_loo, value)
            cached = a2_cache.get(key)
            if cached is None:
                cached = a2_term(c_loo, value)
                a2_cache[key] = cached
            a2[cxp == value] = cached
    # Divisors are clamped away from zero; clamped entries are masked below.
    base = (m - inv_c) / cxp
    a1 = m / cxp - czp / np.maximum(cxp * (cxp - 1), 1)
    inter = np.where(cxp >= 2, a1 * a2, 0.0)
    return np.where(within, base + inter, 0.0)


def dp_tknn_shapley_all(
    ds: Dataset,
    cfg: TknnConfig,
    dval: Dataset,
    num_classes: int,
    params: DpParams,
) -> tuple[ValuationResult, list[PrivatizedCounts]]:
    """DP-TKNN-Shapley over a validation set.

    Per validation point: one Poisson subsample (when q < 1), one counting
    pass, one 3-draw privatization, then every owner's score by O(1)
    decrements on the shared privatized triple. Exactly 3 * |dval| Gaussian
    draws regardless of N.
    """
    if dval.n == 0:
        raise ParameterError("validation set must be nonempty")
    sigma = params.resolve_sigma(COUNTS_SENSITIVITY)
    total = np.zeros(ds.n)
    released: list[PrivatizedCounts] = []
    a2_cache: dict[tuple[int, int], float] = {}
    for lo, hi in validation_chunks(dval.n, ds.n):
        dist = distance_matrix(cfg.metric, ds.features, dval.features[lo:hi])
        within_chunk = dist <= cfg.tau
        match_chunk = ds.labels[None, :] == dval.labels[lo:hi][:, None]
        chunk = np.zeros((hi - lo, ds.n))
        for row in range(hi - lo):
            v = lo + row
            within = within_chunk[row]
            match = match_chunk[row]
            if params.q < 1.0:
                keep = _poisson_mask(ds.n, params.q, stream(params.seed, TAG_SUBSAMPLE, v))
                in_nb = within & keep
                counts = NeighborCounts(int(keep.sum()), 1 + int(in_nb.sum()),
                                        int((in_nb & match).sum()))
            else:
                in_nb = within
                counts = NeighborCounts(ds.n, 1 + int(within.sum()),
                                        int((within & match).sum()))
            priv = privatize_counts(counts, sigma, stream(params.seed, TAG_NOISE, v))
            released.append(priv)
            chunk[row] = _dp_tknn_row_scores(priv, within, in_nb, match, num_classes, a2_cache)
        total += chunk.sum(axis=0)
    descriptor = MethodDescriptor(
        name="dp-tknn-shapley",
        num_classes=num_classes,
        metric=cfg.metric.value,
        tau=cfg.tau,
        weight="shapley",
        dp=params.manifest(COUNTS_SENSITIVITY, draws=3 * dval.n),
    )
    return ValuationResult(total, descriptor, validation_size=dval.n), released


def dp_knn_shapley_all(
    ds: Dataset,
    cfg: KnnConfig,
    dval: Dataset,
    num_classes: int,
    params: DpParams,
    subsampled: bool = False,
) -> ValuationResult:
    """The naive DP baseline on the older KNN-Shapley variant.

    Independent noise per (owner, validation point): N * |dval| draws, with
    no reuse and hence no collusion resistance. The subsampled form redraws a
    fresh Poisson subsample and reruns the recursion per owner, because the
    recursion offers no way to share one subsample across owners.
    """
    if cfg.variant != "old":
        raise ParameterError("the DP baseline is defined for the old variant only")
    if dval.n == 0:
        raise ParameterError("validation set must be nonempty")
    sensitivity = knn_old_sensitivity(cfg.k)
    sigma = params.resolve_sigma(sensitivity)
    n = ds.n
    total = np.zeros(n)
    if not subsampled:
        for lo, hi in validation_chunks(dval.n, n):
            chunk = knn_score_matrix(
                ds, cfg, dval.features[lo:hi], dval.labels[lo:hi], num_classes
            )
            for row in range(hi - lo):
                rng = stream(params.seed, TAG_NOISE, lo + row)
                chunk[row] += rng.normal(0.0, sigma, n) if sigma > 0.0 else 0.0
            total += chunk.sum(axis=0)
    else:
        for v in range(dval.n):
            zval = dval.point(v)
            noise_rng = stream(params.seed, TAG_NOISE, v)
            for i in range(n):
                keep = _poisson_mask(n, params.q, stream(params.seed, TAG_SUBSAMPLE, v, i))
                keep[i] = True  # the owner's own point is always present
                sub = ds.subset(keep)
                pos = int(np.searchsorted(np.flatnonzero(keep), i))
                phi_i = knn_shapley_scores(sub, cfg, zval, num_classes)[pos]
                noise = float(noise_rng.normal(0.0, sigma)) if sigma > 0.0 else 0.0
                total[i] += phi_i + noise
    descriptor = MethodDescriptor(
        name="dp-knn-shapley-old" + ("-subsampled" if subsampled else ""),
        num_classes=num_classes,
        metric=cfg.metric.value,
        k=cfg.k,
        weight="shapley",
        dp=params.manifest(sensitivity, draws=n * dval.n),
    )
    return ValuationResult(total, descriptor, validation_size=dval.n)


def count_triple_l2_change(before: NeighborCounts, after: NeighborCounts) -> float:
    """l2 distance between two counting triples (for sensitivity checks)."""
    a = np.asarray(before.as_tuple(), dtype=np.float64)
    b = np.asarray(after.as_tuple(), dtype=np.float64)
    return float(np.linalg.norm(a - b))
