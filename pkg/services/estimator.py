import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, aslinearoperator, svds

from config import settings
from services.adc import sign_quantize
from services.errors import ConditioningError, ConfigurationError, DivergenceError
from services.pilot import MeasurementModel, dependent_columns

logger = logging.getLogger(__name__)

Method = Literal["biht_linear", "oracle_linear", "least_squares"]


class BihtConfig(BaseModel):
    """Settings of the sign-data support search and the linear stage that follows it."""

    model_config = ConfigDict(frozen=True)

    tau: Union[Literal["auto"], float] = Field(default=settings.BIHT_TAU, description="Step size or 'auto'")
    sparsity_target: int = Field(..., ge=1, description="K-hat, nonzeros expected per Tx-Rx pair")
    max_iters: int = Field(default=settings.BIHT_MAX_ITERS, ge=1)
    stall_window: int = Field(default=settings.BIHT_STALL_WINDOW, ge=1)
    combine: Literal["joint", "separate"] = Field(default="joint", description="One run on [X1; X2] or one per half")
    refine: bool = Field(default=False, description="Backward elimination of coefficients below refine_z standard errors")
    refine_z: float = Field(default=3.0, gt=0)


@dataclass
class BihtResult:
    support: np.ndarray
    iterate: np.ndarray
    iterations: int
    converged: bool
    stop_reason: str
    tau: float
    nonzeros_per_iteration: List[int] = field(default_factory=list)


@dataclass
class EstimationResult:
    estimate: np.ndarray
    support: np.ndarray
    iterations_used: int
    converged: bool
    method: str
    pruned: int = 0


def hard_threshold(values: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest magnitudes; equal magnitudes keep the lower index."""
    order = np.argsort(-np.abs(values), kind="stable")[:k]
    out = np.zeros_like(values)
    out[order] = values[order]
    return out


def _spectral_norm(matrix: Union[np.ndarray, LinearOperator]) -> float:
    if isinstance(matrix, np.ndarray):
        return float(np.linalg.norm(matrix, 2))
    known = getattr(matrix, "spectral_norm", None)
    if known is not None:
        return float(known)
    return float(svds(matrix, k=1, return_singular_vectors=False)[0])


def step_size(matrix: Union[np.ndarray, LinearOperator], cfg: BihtConfig) -> float:
    if cfg.tau == "auto":
        return _spectral_norm(matrix) ** 2 / np.sqrt(matrix.shape[0])
    return float(cfg.tau)


def biht_support(
    one_bit_obs: np.ndarray,
    matrix: Union[np.ndarray, LinearOperator],
    cfg: BihtConfig,
    k_total: Optional[int] = None,
) -> BihtResult:
    """
    Binary iterative hard thresholding on a real system.

    Args:
        one_bit_obs: +-1 observations, one per matrix row
        matrix: Real matrix or LinearOperator
        cfg: Step size, iteration limits
        k_total: Nonzeros kept after each step (defaults to cfg.sparsity_target)

    Returns:
        BihtResult whose iterate lies on the unit sphere and whose support is its nonzero set
    """
    operator = aslinearoperator(matrix)
    obs = np.asarray(one_bit_obs, dtype=float)
    rows, cols = operator.shape
    if obs.shape != (rows,):
        raise ConfigurationError(f"observation length {obs.shape} does not match {rows} rows")
    k = min(k_total if k_total is not None else cfg.sparsity_target, cols)
    if k < 1:
        raise ConfigurationError("sparsity target must be at least 1")
    tau = step_size(matrix, cfg)

    h = np.zeros(cols)
    projected = np.zeros(rows)
    previous = None
    stall = 0
    nonzeros = []
    stop_reason = "max_iters"
    iteration = 0
    for iteration in range(1, cfg.max_iters + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            update = h + 0.5 * tau * operator.rmatvec(obs - sign_quantize(projected))
        if not np.all(np.isfinite(update)):
            raise DivergenceError(f"BIHT iterate became non-finite with tau={tau:g}", tau=tau)
        h = hard_threshold(update, k)
        support = np.flatnonzero(h)
        nonzeros.append(int(support.size))
        projected = operator.matvec(h)
        if np.array_equal(sign_quantize(projected), obs):
            stop_reason = "consistent"
            break
        stall = stall + 1 if previous is not None and np.array_equal(support, previous) else 0
        previous = support
        if stall >= cfg.stall_window:
            stop_reason = "stalled"
            break

    norm = np.linalg.norm(h)
    if norm > 0:
        h = h / norm
    logger.debug(f"BIHT stopped ({stop_reason}) after {iteration} iterations, {nonzeros[-1]} nonzeros")
    return BihtResult(
        support=np.flatnonzero(h),
        iterate=h,
        iterations=iteration,
        converged=stop_reason != "max_iters",
        stop_reason=stop_reason,
        tau=tau,
        nonzeros_per_iteration=nonzeros,
    )


def one_bit_observation(analog: np.ndarray) -> np.ndarray:
    """Signs of the real parts followed by signs of the imaginary parts."""
    analog = np.asarray(analog)
    return np.concatenate((sign_quantize(analog.real), sign_quantize(analog.imag)))


def complex_support(iterates: List[np.ndarray], cols: int) -> np.ndarray:
    """Map real-stacked nonzeros onto complex indices (index mod cols), deduplicated."""
    found = [np.flatnonzero(it) % cols for it in iterates]
    if not found:
        return np.array([], dtype=int)
    return np.unique(np.concatenate(found))


def _receiver_groups(model: MeasurementModel, support: np.ndarray):
    # Receivers decouple: receiver j only sees columns j*Nt*N ... (j+1)*Nt*N - 1
    width = model.nt * model.n
    owner = support // width
    for j in range(model.nr):
        positions = np.flatnonzero(owner == j)
        if positions.size:
            yield j, positions, support[positions] - j * width


def _restricted_solve(
    quantized_obs: np.ndarray,
    model: MeasurementModel,
    support: np.ndarray,
    strict: bool = True,
) -> np.ndarray:
    coef = np.zeros(support.size, dtype=complex)
    for j, positions, local in _receiver_groups(model, support):
        columns = model.wide_block[:, local]
        if strict:
            if local.size > model.m:
                raise ConditioningError(
                    f"receiver {j}: support of {local.size} columns exceeds {model.m} rows",
                    columns=support[positions],
                )
            dependent = dependent_columns(columns)
            if dependent.size:
                raise ConditioningError(
                    f"receiver {j}: {dependent.size} of {local.size} support columns are linearly dependent",
                    columns=support[positions][dependent],
                )
        coef[positions], *_ = np.linalg.lstsq(columns, quantized_obs[j * model.m:(j + 1) * model.m], rcond=None)
    return coef


def estimate_channel(
    quantized_obs: np.ndarray,
    model: MeasurementModel,
    support: np.ndarray,
    method: Method = "oracle_linear",
) -> EstimationResult:
    """Least squares on the support columns, zeros elsewhere."""
    quantized_obs = np.asarray(quantized_obs)
    if quantized_obs.shape != (model.rows,):
        raise ConfigurationError(f"observation length {quantized_obs.shape} does not match {model.rows} rows")
    support = np.unique(np.asarray(support, dtype=int))
    estimate = np.zeros(model.cols, dtype=complex)
    if support.size:
        estimate[support] = _restricted_solve(quantized_obs, model, support)
    return EstimationResult(estimate=estimate, support=support, iterations_used=0, converged=True, method=method)


def strongest_per_pair(candidates: np.ndarray, coef: np.ndarray, n: int, limit: int) -> np.ndarray:
    """Keep the `limit` largest |coef| of every Tx-Rx pair; equal magnitudes keep the lower index."""
    if candidates.size == 0:
        return candidates
    pair = candidates // n
    order = np.lexsort((candidates, -np.abs(coef), pair))
    ranked = pair[order]
    rank = np.arange(order.size) - np.searchsorted(ranked, ranked, side="left")
    return np.sort(candidates[order[rank < limit]])


def _refine(quantized_obs: np.ndarray, model: MeasurementModel, result: EstimationResult, z: float) -> EstimationResult:
    # Backward elimination on per-receiver normal equations: each round drops the weaker half
    # of the coefficients below z standard errors, then refits
    support = result.support
    grams = {}
    for j, _, local in _receiver_groups(model, support):
        columns = model.wide_block[:, local]
        y = quantized_obs[j * model.m:(j + 1) * model.m]
        grams[j] = (local, columns.conj().T @ columns, columns.conj().T @ y, float(np.vdot(y, y).real))
    keep = {j: np.ones(entry[0].size, dtype=bool) for j, entry in grams.items()}
    total_energy = float(np.vdot(quantized_obs, quantized_obs).real)

    while True:
        size = sum(int(mask.sum()) for mask in keep.values())
        dof = model.rows - size
        if size <= 1 or dof <= 0:
            break
        coefs, variances, owners = [], [], []
        explained = 0.0
        for j, (local, gram, rhs, _) in grams.items():
            mask = keep[j]
            if not mask.any():
                continue
            sub_gram = gram[np.ix_(mask, mask)]
            sub_rhs = rhs[mask]
            coef = linalg.solve(sub_gram, sub_rhs, assume_a="her")
            explained += float(np.vdot(sub_rhs, coef).real)
            coefs.append(coef)
            variances.append(np.real(np.diag(linalg.inv(sub_gram))))
            owners.extend((j, p) for p in np.flatnonzero(mask))
        coef = np.concatenate(coefs)
        noise = max(total_energy - explained, 0.0) / dof
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.abs(coef) / np.sqrt(noise * np.clip(np.concatenate(variances), 0.0, None))
        weak = np.flatnonzero(score < z)
        if weak.size == 0:
            break
        weak = weak[np.argsort(score[weak], kind="stable")]
        drop = weak[:max(1, weak.size // 2)]
        for index in drop:
            j, p = owners[index]
            keep[j][p] = False

    width = model.nt * model.n
    kept = [local[keep[j]] + j * width for j, (local, *_) in grams.items()]
    final = np.sort(np.concatenate(kept)) if kept else support
    if final.size == support.size:
        return result
    refit = estimate_channel(quantized_obs, model, final, method=result.method)
    refit.iterations_used = result.iterations_used
    refit.converged = result.converged
    refit.pruned = int(support.size - final.size)
    logger.debug(f"Refinement kept {final.size} of {support.size} coefficients")
    return refit


def estimate_biht_linear(
    quantized_obs: np.ndarray,
    one_bit_obs: np.ndarray,
    model: MeasurementModel,
    cfg: BihtConfig,
) -> EstimationResult:
    """
    Support from sign data, amplitudes from B-bit data.

    BIHT runs on the sign data; its nonzeros map to complex indices (mod Nt*Nr*N). A least
    squares fit on those candidates keeps the K-hat largest coefficients of every pair, and
    the final estimate is the restricted least squares on that set.

    Args:
        quantized_obs: Complex B-bit observations (length Nr*M)
        one_bit_obs: Real +-1 vector [sgn(Re y); sgn(Im y)] (length 2*Nr*M)
        model: Measurement model shared by both observations
        cfg: BIHT settings; refine=True adds backward elimination after the fit

    Returns:
        EstimationResult with at most Nt*Nr*K-hat nonzeros
    """
    quantized_obs = np.asarray(quantized_obs)
    one_bit_obs = np.asarray(one_bit_obs, dtype=float)
    if one_bit_obs.shape != (2 * model.rows,):
        raise ConfigurationError(f"one-bit observation length {one_bit_obs.shape} != {2 * model.rows}")
    if quantized_obs.shape != (model.rows,):
        raise ConfigurationError(f"observation length {quantized_obs.shape} does not match {model.rows} rows")
    pairs = model.nt * model.nr
    # Joint runs see [h_R; h_I] with up to two real nonzeros per complex tap
    k_total = pairs * cfg.sparsity_target * (2 if cfg.combine == "joint" else 1)
    if cfg.combine == "joint":
        runs = [biht_support(one_bit_obs, model.real_operator("joint"), cfg, k_total=k_total)]
    else:
        runs = [
            biht_support(one_bit_obs[:model.rows], model.real_operator("real"), cfg, k_total=k_total),
            biht_support(one_bit_obs[model.rows:], model.real_operator("imag"), cfg, k_total=k_total),
        ]
    candidates = complex_support([run.iterate for run in runs], model.cols)
    ranking = _restricted_solve(quantized_obs, model, candidates, strict=False)
    support = strongest_per_pair(candidates, ranking, model.n, cfg.sparsity_target)
    logger.debug(f"BIHT proposed {candidates.size} complex taps, {support.size} kept for the linear fit")
    result = estimate_channel(quantized_obs, model, support, method="biht_linear")
    result.iterations_used = max(run.iterations for run in runs)
    result.converged = all(run.converged for run in runs)
    if cfg.refine:
        result = _refine(quantized_obs, model, result, cfg.refine_z)
    return result


def estimate_oracle(quantized_obs: np.ndarray, model: MeasurementModel, true_support: np.ndarray) -> EstimationResult:
    return estimate_channel(quantized_obs, model, true_support, method="oracle_linear")


def estimate_least_squares(quantized_obs: np.ndarray, model: MeasurementModel) -> EstimationResult:
    """Unrestricted pseudo-inverse solve; minimum-norm when the model is underdetermined."""
    quantized_obs = np.asarray(quantized_obs)
    if quantized_obs.shape != (model.rows,):
        raise ConfigurationError(f"observation length {quantized_obs.shape} does not match {model.rows} rows")
    # Receivers decouple: one solve with Nr right-hand sides
    stacked = quantized_obs.reshape(model.nr, model.m).T
    solution, *_ = np.linalg.lstsq(model.wide_block, stacked, rcond=None)
    return EstimationResult(
        estimate=solution.T.reshape(-1).astype(complex),
        support=np.arange(model.cols),
        iterations_used=0,
        converged=True,
        method="least_squares",
    )
