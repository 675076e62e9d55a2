"""Threshold-KNN Shapley: closed form from three counting queries.

For one validation point, the value of a training point depends on its own
threshold membership and label match plus three counts over the rest of the
data: c = |D_-z|, c_x = 1 + (neighbors of the validation point within tau in
D_-z), and c_zplus = same-label neighbors in D_-z. The count triple for every
leave-one-out set follows from the full-data triple by O(1) decrements, which
is what makes the full score vector O(N) per validation point.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma

from .dataset import (
    Dataset,
    DistanceMetric,
    LabeledPoint,
    distance_matrix,
    distances_to,
    validation_chunks,
)
from .errors import EnumerationLimitError, ParameterError
from .valuation import MethodDescriptor, SemivalueWeight, ValuationResult


@dataclass(frozen=True)
class TknnConfig:
    tau: float
    metric: DistanceMetric = DistanceMetric.NEGATIVE_COSINE

    def __post_init__(self) -> None:
        if self.metric is DistanceMetric.NEGATIVE_COSINE and not -1.0 <= self.tau <= 1.0:
            raise ParameterError("tau must lie in [-1, 1] for negative-cosine distance")


@dataclass(frozen=True)
class NeighborCounts:
    """The counting triple (c, c_x, c_zplus) on a leave-one-out dataset."""

    c: int
    c_x: int
    c_zplus: int

    def __post_init__(self) -> None:
        if self.c < 0:
            raise ParameterError("c must be nonnegative")
        if not 1 <= self.c_x <= self.c + 1:
            raise ParameterError(f"c_x = {self.c_x} outside [1, c + 1] for c = {self.c}")
        if not 0 <= self.c_zplus <= self.c_x - 1:
            raise ParameterError(
                f"c_zplus = {self.c_zplus} outside [0, c_x - 1] for c_x = {self.c_x}"
            )

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.c, self.c_x, self.c_zplus)


def counts_full(ds: Dataset, cfg: TknnConfig, zval: LabeledPoint) -> NeighborCounts:
    """One O(N) pass over the full dataset."""
    if ds.n == 0:
        return NeighborCounts(0, 1, 0)
    dist = distances_to(cfg.metric, ds.features, zval.features)
    within = dist <= cfg.tau
    c_x = 1 + int(within.sum())
    c_zplus = int((within & (ds.labels == zval.label)).sum())
    return NeighborCounts(ds.n, c_x, c_zplus)


def counts_leave_one_out(
    full: NeighborCounts,
    in_threshold: bool,
    label_match: bool,
) -> NeighborCounts:
    """Counts on D minus one point, from the full-data counts, in O(1).

    Raises when the decrements would violate the count invariants, which
    signals that the flags do not describe a point of the counted dataset.
    """
    dec = 1 if in_threshold else 0
    try:
        return NeighborCounts(
            full.c - 1,
            full.c_x - dec,
            full.c_zplus - (dec if label_match else 0),
        )
    except ParameterError as exc:
        raise ParameterError(f"inconsistent leave-one-out decrement: {exc}") from exc


_A2_BLOCK = 1 << 16


def a2_term(c: int, c_x: int) -> float:
    """A2 = sum_{k=0}^{c} (1 - C(c-k, c_x)/C(c+1, c_x)) / (k+1)  -  1.

    The binomial ratio R(k) follows a multiplicative recurrence: each step
    multiplies by (c - k + 1 - c_x) / (c - k + 1), which reaches exactly zero
    once c - k < c_x and never materializes a binomial coefficient. The ratio
    is evaluated in cache-sized blocks; once it underflows or hits its exact
    zero, the remaining terms are a pure harmonic tail, closed in O(1) with
    digamma.
    """
    if c_x < 1 or c_x > c + 1:
        raise ParameterError("a2_term needs 1 <= c_x <= c + 1")
    r0 = (c + 1 - c_x) / (c + 1)
    if c == 0:
        return (1.0 - r0) - 1.0
    total = 1.0 - r0  # the k = 0 term
    running = r0
    k = 1
    while k <= c and running != 0.0:
        hi = min(k + _A2_BLOCK - 1, c)
        steps = np.arange(c - k + 1.0, c - hi, -1.0)  # c - j + 1 for j = k..hi
        work = steps - c_x
        work /= steps
        np.cumprod(work, out=work)
        work *= running
        running = float(work[-1])
        np.subtract(1.0, work, out=work)
        work /= np.arange(k + 1.0, hi + 2.0)
        total += float(work.sum())
        k = hi + 1
    if k <= c:
        # R(j) is exactly zero from here on: sum_{j=k}^{c} 1/(j+1).
        total += float(digamma(c + 2.0) - digamma(k + 1.0))
    return total - 1.0


def tknn_shapley_from_counts(
    counts: NeighborCounts,
    label_match: bool,
    in_threshold: bool,
    num_classes: int,
    _a2_cache: dict[tuple[int, int], float] | None = None,
) -> float:
    """The closed-form value given the leave-one-out counting triple.

    A point outside the threshold has value exactly zero. When c_x = 1 the
    interaction term is skipped entirely, so no division by zero can occur.
    """
    if not in_threshold:
        return 0.0
    c, c_x, c_zplus = counts.as_tuple()
    match = 1.0 if label_match else 0.0
    base = (match - 1.0 / num_classes) / c_x
    if c_x < 2:
        return base
    a1 = match / c_x - c_zplus / (c_x * (c_x - 1.0))
    if _a2_cache is not None:
        key = (c, c_x)
        a2 = _a2_cache.get(key)
        if a2 is None:
            a2 = a2_term(c, c_x)
            _a2_cache[key] = a2
    else:
        a2 = a2_term(c, c_x)
    return base + a1 * a2


def _descriptor(cfg: TknnConfig, num_classes: int, weight: str = "shapley") -> MethodDescriptor:
    return MethodDescriptor(
        name="tknn-shapley" if weight == "shapley" else "tknn-semivalue",
        num_classes=num_classes,
        metric=cfg.metric.value,
        tau=cfg.tau,
        weight=weight,
    )


def tknn_score_matrix(
    ds: Dataset,
    cfg: TknnConfig,
    val_features: np.ndarray,
    val_labels: np.ndarray,
    num_classes: int,
) -> np.ndarray:
    """Score matrix (one row per validation point), O(N) per row."""
    n = ds.n
    v = np.asarray(val_labels).shape[0]
    if n == 0:
        return np.zeros((v, 0))
    dist = distance_matrix(cfg.metric, ds.features, val_features)
    within = dist <= cfg.tau
    match = ds.labels[None, :] == np.asarray(val_labels)[:, None]
    c_x_rows = 1 + within.sum(axis=1)
    c_zplus_rows = (within & match).sum(axis=1)

    # Every in-threshold point of a row shares the same leave-one-out (c, c_x).
    cxp = (c_x_rows - 1)[:, None]
    inv_c = 1.0 / num_classes
    cache: dict[int, float] = {}
    a2_rows = np.zeros(v)
    for row, cx in enumerate(c_x_rows):
        if cx >= 3:  # interaction needs the leave-one-out c_x of at least 2
            value = cache.get(int(cx))
            if value is None:
                value = a2_term(n - 1, int(cx) - 1)
                cache[int(cx)] = value
            a2_rows[row] = value
    # Buffer-lean assembly: same arithmetic as the scalar/DP paths, evaluated
    # in place to keep large-N runs memory-bandwidth friendly. Divisors are
    # clamped away from zero; clamped entries are masked at the end.
    cxp_safe = np.maximum(cxp, 1)
    denom = np.maximum(cxp * (cxp - 1), 1)
    m = match.astype(np.float64)
    work = m - inv_c
    work /= cxp_safe  # base = (m - 1/C) / c_x'
    czp_div = c_zplus_rows[:, None] - m
    czp_div /= denom
    m /= cxp_safe
    m -= czp_div  # a1 = m / c_x' - czp / (c_x' (c_x' - 1))
    m *= a2_rows[:, None]
    m[c_x_rows < 3] = 0.0  # interaction vanishes when the loo c_x is below 2
    work += m
    work *= within  # out-of-threshold points are worth exactly zero
    return work


def tknn_shapley_scores(
    ds: Dataset,
    cfg: TknnConfig,
    zval: LabeledPoint,
    num_classes: int,
) -> np.ndarray:
    """Raw score vector for one validation point."""
    return tknn_score_matrix(
        ds, cfg, zval.features[None, :], np.array([zval.label]), num_classes
    )[0]


def tknn_shapley_single(
    ds: Dataset,
    cfg: TknnConfig,
    zval: LabeledPoint,
    num_classes: int,
) -> ValuationResult:
    scores = tknn_shapley_scores(ds, cfg, zval, num_classes)
    return ValuationResult(scores, _descriptor(cfg, num_classes), validation_size=1)


def tknn_shapley_all(
    ds: Dataset,
    cfg: TknnConfig,
    dval: Dataset,
    num_classes: int,
    threads: int = 1,
) -> ValuationResult:
    """Exact TKNN-Shapley summed over a validation set."""
    if dval.n == 0:
        raise ParameterError("validation set must be nonempty")
    chunks = validation_chunks(dval.n, ds.n)

    def run_chunk(bounds: tuple[int, int]) -> np.ndarray:
        lo, hi = bounds
        return tknn_score_matrix(
            ds, cfg, dval.features[lo:hi], dval.labels[lo:hi], num_classes
        ).sum(axis=0)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_chunk, chunks))
    else:
        parts = [run_chunk(c) for c in chunks]
    total = np.zeros(ds.n)
    for part in parts:
        total += part
    return ValuationResult(total, _descriptor(cfg, num_classes), validation_size=dval.n)


DEFAULT_SEMIVALUE_GUARD = 1000


def tknn_semivalue_generic(
    ds: Dataset,
    cfg: TknnConfig,
    weight: SemivalueWeight,
    zval: LabeledPoint,
    num_classes: int,
    max_n: int = DEFAULT_SEMIVALUE_GUARD,
) -> ValuationResult:
    """Semivalue with an arbitrary normalized weight, by direct summation.

    phi_i = 1[c_x >= 2] A1 (1/N) sum_k w(k+1) B(k)
          + (1[match] - 1/C) (1/N) sum_k w(k+1) C(N - c_x, k)
    with B(k) = C(N, k+1) - C(N - c_x, k+1) - c_x C(N - c_x, k), counts taken
    on the leave-one-out dataset. Exact integer binomials keep the sums stable
    up to the size guard; beyond that a weight-specific simplification (as
    done for the Shapley weight) is required.
    """
    n = ds.n
    if n > max_n:
        raise EnumerationLimitError(
            f"direct semivalue summation is guarded at N = {max_n}; got N = {n}"
        )
    descriptor = _descriptor(cfg, num_classes, weight=weight.kind)
    if n == 0:
        return ValuationResult(np.zeros(0), descriptor, validation_size=1)
    w = weight.values(n)
    dist = distances_to(cfg.metric, ds.features, zval.features)
    within = dist <= cfg.tau
    match = ds.labels == zval.label
    c_x_full = 1 + int(within.sum())
    c_zplus_full = int((within & match).sum())

    sums: dict[int, tuple[float, float]] = {}

    def sums_for(cxp: int) -> tuple[float, float]:
        cached = sums.get(cxp)
        if cached is not None:
            return cached
        s_inter = 0.0
        s_base = 0.0
        for k in range(n):
            base = math.comb(n - cxp, k)
            b_k = math.comb(n, k + 1) - math.comb(n - cxp, k + 1) - cxp * base
            s_inter += w[k] * b_k
            s_base += w[k] * base
        result = (s_inter / n, s_base / n)
        sums[cxp] = result
        return result

    inv_c = 1.0 / num_classes
    scores = np.zeros(n)
    for i in np.flatnonzero(within):
        cxp = c_x_full - 1
        czp = c_zplus_full - (1 if match[i] else 0)
        m = 1.0 if match[i] else 0.0
        s_inter, s_base = sums_for(cxp)
        value = (m - inv_c) * s_base
        if cxp >= 2:
            a1 = m / cxp - czp / (cxp * (cxp - 1.0))
            value += a1 * s_inter
        scores[i] = value
    return ValuationResult(scores, descriptor, validation_size=1)
