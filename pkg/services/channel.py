import logging
import math
from dataclasses import dataclass
from typing import Any, Iterable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy import integrate

from services.errors import ConfigurationError, DomainError
from services.seeding import SeedLike, get_rng

logger = logging.getLogger(__name__)

# Returned by rsnr when the estimate matches the channel exactly
RSNR_INFINITY = math.inf


class ChannelSpec(BaseModel):
    """Geometry and sparsity structure of a stacked multipath channel."""

    model_config = ConfigDict(frozen=True)

    n: int = Field(..., ge=1, description="Taps per Tx-Rx pair (N)")
    k: int = Field(..., ge=1, description="Nonzero taps per pair (K)")
    nt: int = Field(default=1, ge=1, description="Transmit antennas")
    nr: int = Field(default=1, ge=1, description="Receive antennas")
    support_model: Literal["uniform", "clustered"] = Field(default="uniform")
    num_clusters: Optional[int] = Field(default=None, ge=1, description="Clusters per pair (clustered model)")
    cluster_width: Optional[int] = Field(default=None, ge=1, description="Minimum span of each cluster in taps")
    shared_clusters: bool = Field(default=True, description="Reuse cluster spans across all pairs")
    normalize_peak: bool = Field(default=True, description="Scale so the largest magnitude is 1")
    normalization: Literal["per_pair", "global"] = Field(default="per_pair")

    def __init__(self, **data: Any) -> None:
        try:
            super().__init__(**data)
        except ValidationError as exc:
            raise ConfigurationError(f"Invalid channel spec: {exc}") from exc

    @model_validator(mode="after")
    def check_geometry(self) -> "ChannelSpec":
        if self.k > self.n:
            raise ValueError(f"K={self.k} exceeds N={self.n}")
        if self.support_model == "clustered":
            if self.num_clusters is None or self.cluster_width is None:
                raise ValueError("clustered model needs num_clusters and cluster_width")
            if self.num_clusters > self.k:
                raise ValueError(f"num_clusters={self.num_clusters} exceeds K={self.k}")
            needed = sum(cluster_spans(self.k, self.num_clusters, self.cluster_width)) + self.num_clusters - 1
            if needed > self.n:
                raise ValueError(f"clusters need {needed} taps but N={self.n}")
        return self

    @property
    def length(self) -> int:
        return self.nt * self.nr * self.n

    @property
    def num_pairs(self) -> int:
        return self.nt * self.nr


@dataclass
class SparseChannel:
    """Stacked channel h = [h_11, h_21, ..., h_Nt1, h_12, ..., h_NtNr]."""

    entries: np.ndarray
    support: np.ndarray
    spec: ChannelSpec

    def block_index(self, tx: int, rx: int) -> int:
        return rx * self.spec.nt + tx

    def pair(self, tx: int, rx: int) -> np.ndarray:
        start = self.block_index(tx, rx) * self.spec.n
        return self.entries[start:start + self.spec.n]

    @property
    def real_energy(self) -> float:
        return float(np.sum(self.entries.real ** 2))


@dataclass(frozen=True)
class Rsnr:
    linear: float
    db: float


@dataclass(frozen=True)
class SupportMetrics:
    exact: bool
    hits: int
    misses: int
    false_alarms: int


def cluster_sizes(k: int, num_clusters: int) -> list:
    base, extra = divmod(k, num_clusters)
    return [base + (1 if c < extra else 0) for c in range(num_clusters)]


def cluster_spans(k: int, num_clusters: int, width: int) -> list:
    return [max(width, size) for size in cluster_sizes(k, num_clusters)]


def _cluster_starts(spans: list, n: int, rng: np.random.Generator) -> np.ndarray:
    # Places the spans left to right with at least one empty tap between neighbours
    count = len(spans)
    free = n - sum(spans) - (count - 1)
    slots = np.sort(rng.choice(free + count, size=count, replace=False))
    gaps = slots - np.arange(count)
    offsets = np.concatenate(([0], np.cumsum(np.asarray(spans[:-1]) + 1)))
    return gaps + offsets


def _clustered_taps(spec: ChannelSpec, starts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    sizes = cluster_sizes(spec.k, spec.num_clusters)
    spans = cluster_spans(spec.k, spec.num_clusters, spec.cluster_width)
    taps = [start + rng.choice(span, size=size, replace=False) for start, span, size in zip(starts, spans, sizes)]
    return np.sort(np.concatenate(taps))


def generate_channel(spec: ChannelSpec, seed: SeedLike = None) -> SparseChannel:
    """
    Draw a sparse channel realization.

    Args:
        spec: Channel geometry and support model
        seed: Anything accepted by np.random.default_rng

    Returns:
        SparseChannel with exactly K nonzeros per pair and CN(0,1) values before normalization
    """
    rng = get_rng(seed)
    entries = np.zeros(spec.length, dtype=complex)
    shared_starts = None
    if spec.support_model == "clustered" and spec.shared_clusters:
        spans = cluster_spans(spec.k, spec.num_clusters, spec.cluster_width)
        shared_starts = _cluster_starts(spans, spec.n, rng)

    supports = []
    for block in range(spec.num_pairs):
        if spec.support_model == "uniform":
            taps = np.sort(rng.choice(spec.n, size=spec.k, replace=False))
        else:
            starts = shared_starts
            if starts is None:
                spans = cluster_spans(spec.k, spec.num_clusters, spec.cluster_width)
                starts = _cluster_starts(spans, spec.n, rng)
            taps = _clustered_taps(spec, starts, rng)
        values = (rng.standard_normal(spec.k) + 1j * rng.standard_normal(spec.k)) / np.sqrt(2.0)
        if spec.normalize_peak and spec.normalization == "per_pair":
            values = values / np.max(np.abs(values))
        offset = block * spec.n
        entries[offset + taps] = values
        supports.append(offset + taps)

    if spec.normalize_peak and spec.normalization == "global":
        entries = entries / np.max(np.abs(entries))

    support = np.concatenate(supports).astype(int)
    logger.debug(f"Generated channel with {support.size} nonzeros over {spec.num_pairs} pairs")
    return SparseChannel(entries=entries, support=support, spec=spec)


def _expected_peak_ratio_energy(count: int) -> float:
    # E[sum |g|^2 / max |g|^2] for count i.i.d. CN(0,1) draws
    if count == 1:
        return 1.0

    def integrand(m: float) -> float:
        if m == 0.0:
            return 0.0
        tail = -math.expm1(-m)
        return (tail - m * math.exp(-m)) * tail ** (count - 2) * math.exp(-m) / m

    value, _ = integrate.quad(integrand, 0.0, np.inf, limit=200)
    return 1.0 + count * (count - 1) * value


def expected_pair_energy(spec: ChannelSpec) -> float:
    """Analytic E||h_ij||^2 for one Tx-Rx sub-vector under the configured normalization."""
    if not spec.normalize_peak:
        return float(spec.k)
    if spec.normalization == "per_pair":
        return _expected_peak_ratio_energy(spec.k)
    return _expected_peak_ratio_energy(spec.k * spec.num_pairs) / spec.num_pairs


def rsnr(true_channel: np.ndarray, estimate: np.ndarray, normalize: bool = False) -> Rsnr:
    """
    Reconstruction SNR ||h||^2 / ||h - h_est||^2.

    With normalize=True the estimate is first rescaled to the norm of the true channel,
    which removes the amplitude ambiguity of sign-only data.
    """
    h = np.asarray(true_channel)
    est = np.asarray(estimate)
    if h.shape != est.shape:
        raise DomainError(f"length mismatch: {h.shape} vs {est.shape}")
    signal = float(np.sum(np.abs(h) ** 2))
    if signal == 0.0:
        raise DomainError("RSNR undefined for an all-zero channel")
    if normalize:
        norm = np.linalg.norm(est)
        if norm > 0:
            est = est * (np.sqrt(signal) / norm)
    error = float(np.sum(np.abs(h - est) ** 2))
    if error == 0.0:
        return Rsnr(linear=RSNR_INFINITY, db=RSNR_INFINITY)
    linear = signal / error
    return Rsnr(linear=linear, db=10.0 * math.log10(linear))


def support_metrics(true_support: Iterable[int], estimated_support: Iterable[int]) -> SupportMetrics:
    truth = {int(i) for i in true_support}
    found = {int(i) for i in estimated_support}
    hits = len(truth & found)
    return SupportMetrics(
        exact=truth == found,
        hits=hits,
        misses=len(truth - found),
        false_alarms=len(found - truth),
    )
