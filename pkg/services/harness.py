import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy import stats

from config import settings
from services.adc import AdcConfig, design_quantizer, quantize_complex, solve_budget
from services.bounds import (
    SIGMA_INTERPRETATION,
    BoundInput,
    effective_noise_variance,
    oracle_rsnr_bound,
    sigma_matrix,
)
from services.channel import (
    ChannelSpec,
    SparseChannel,
    expected_pair_energy,
    generate_channel,
    rsnr,
    support_metrics,
)
from services.errors import ConfigurationError, ToolkitError
from services.estimator import (
    BihtConfig,
    EstimationResult,
    estimate_biht_linear,
    estimate_least_squares,
    estimate_oracle,
    one_bit_observation,
)
from services.pilot import (
    MeasurementModel,
    build_measurement_model,
    generate_pilots,
    orthogonal_design_minimum,
    orthogonal_feasible,
    probe_rip,
)
from services.seeding import (
    CHANNEL_STREAM,
    NOISE_STREAM,
    PILOT_STREAM,
    PROBE_STREAM,
    get_rng,
    stream_seed,
)

logger = logging.getLogger(__name__)

MAX_RSNR_DB = 300.0
METHODS = ("biht_linear", "oracle_linear", "least_squares")
SNR_DEFINITION = (
    "SNR = E||X h||^2 / E||e||^2 per receive slot; sigma_e^2 = Nt * E||h_pair||^2 / (M * SNR), "
    "noise CN(0, sigma_e^2)"
)
RIP_NOTE = "delta_hat is sampled at order Nt*Nr*K with per-block index sets and lower-bounds the true constant"

# Published 20 mW / 100 ns operating points: bit depth -> (f_s in GHz, M)
PUBLISHED_TABLE = {
    2: (10.0, 1000),
    3: (5.0, 500),
    4: (2.5, 250),
    5: (1.25, 125),
    6: (0.63, 75),
    7: (0.31, 38),
    8: (0.16, 19),
}
PUBLISHED_BUDGET_W = 0.02
PUBLISHED_DURATION_S = 100e-9
DISCREPANCY_TOLERANCE = 0.05


class ExperimentConfig(BaseModel):
    """Everything that determines a Monte Carlo run, together with master_seed."""

    model_config = ConfigDict(frozen=True)

    # Geometry
    nt: int = Field(default=1, ge=1, description="Transmit antennas")
    nr: int = Field(default=1, ge=1, description="Receive antennas")
    n: int = Field(default=200, ge=1, description="Taps per Tx-Rx pair")
    k: int = Field(default=5, ge=1, description="Nonzeros per pair")
    khat: Optional[int] = Field(default=None, ge=1, description="Sparsity target for BIHT (defaults to k)")

    # Channel and pilots
    pilot_mode: Literal["iid_random", "exact_orthogonal"] = "iid_random"
    support_model: Literal["uniform", "clustered"] = "uniform"
    num_clusters: Optional[int] = Field(default=None, ge=1)
    cluster_width: Optional[int] = Field(default=None, ge=1)
    shared_clusters: bool = True
    normalize_peak: bool = True
    normalization: Literal["per_pair", "global"] = "per_pair"

    # ADC budget
    power_budget: float = Field(default=settings.POWER_BUDGET_W, gt=0, description="Watts")
    walden_c: float = Field(default=settings.WALDEN_C_J, gt=0, description="Joules per conversion step")
    duration: float = Field(default=settings.DURATION_S, gt=0, description="Seconds of training per transmitter")
    duration_scaling: Literal["per_transmitter", "fixed"] = "per_transmitter"
    training_length: Optional[int] = Field(default=settings.TRAINING_LENGTH, ge=1, description="Pilot length per antenna")
    bit_depth_grid: List[int] = Field(default_factory=lambda: list(range(2, 9)))
    snr_grid_db: List[float] = Field(default_factory=lambda: [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0])
    m_override: Optional[List[int]] = Field(default=None, description="Sample count per bit depth")

    # Monte Carlo
    trials: int = Field(default=200, ge=1)
    master_seed: int = Field(default=settings.MASTER_SEED, ge=0)
    workers: int = Field(default=settings.WORKERS, ge=1)
    rip_samples: int = Field(default=settings.RIP_SAMPLES, ge=1)

    # BIHT
    tau: Union[Literal["auto"], float] = settings.BIHT_TAU
    max_iters: int = Field(default=settings.BIHT_MAX_ITERS, ge=1)
    stall_window: int = Field(default=settings.BIHT_STALL_WINDOW, ge=1)
    combine: Literal["joint", "separate"] = "joint"
    refine: bool = False
    refine_z: float = Field(default=3.0, gt=0)

    @model_validator(mode="after")
    def check_grids(self) -> "ExperimentConfig":
        if not self.bit_depth_grid or not self.snr_grid_db:
            raise ValueError("bit_depth_grid and snr_grid_db must not be empty")
        if min(self.bit_depth_grid) < 1:
            raise ValueError("bit depths must be at least 1")
        if len(set(self.bit_depth_grid)) != len(self.bit_depth_grid):
            raise ValueError("bit_depth_grid has duplicates")
        if self.m_override is not None and len(self.m_override) != len(self.bit_depth_grid):
            raise ValueError("m_override needs one entry per bit depth")
        if self.training_length is not None and self.training_length < self.n:
            raise ValueError(f"training_length={self.training_length} leaves no full rows for N={self.n}")
        try:
            self.channel_spec
        except ConfigurationError as exc:
            raise ValueError(exc.message) from exc
        if self.pilot_mode == "exact_orthogonal":
            self._check_orthogonal_rows()
        if self.sparsity_target < self.k:
            logger.warning(f"khat={self.sparsity_target} is below k={self.k}; support will be truncated")
        return self

    def _check_orthogonal_rows(self) -> None:
        unit = 2 ** (self.nt - 1)
        for point in adc_points(self):
            rows = rows_used(self, point)
            if rows >= 1 and not orthogonal_feasible(self.nt, rows, self.n):
                m_min, p_min = orthogonal_design_minimum(self.nt, self.n)
                raise ValueError(
                    f"exact_orthogonal pilots infeasible at B={point.bit_depth}: {rows} rows for Nt={self.nt}, "
                    f"N={self.n} (need a multiple of {unit} and at least M={m_min}, training length {p_min})"
                )

    @property
    def sparsity_target(self) -> int:
        return self.khat if self.khat is not None else self.k

    @property
    def channel_spec(self) -> ChannelSpec:
        return ChannelSpec(
            n=self.n,
            k=self.k,
            nt=self.nt,
            nr=self.nr,
            support_model=self.support_model,
            num_clusters=self.num_clusters,
            cluster_width=self.cluster_width,
            shared_clusters=self.shared_clusters,
            normalize_peak=self.normalize_peak,
            normalization=self.normalization,
        )

    def biht_config(self, khat: Optional[int] = None) -> BihtConfig:
        return BihtConfig(
            tau=self.tau,
            sparsity_target=khat or self.sparsity_target,
            max_iters=self.max_iters,
            stall_window=self.stall_window,
            combine=self.combine,
            refine=self.refine,
            refine_z=self.refine_z,
        )

    @property
    def slot_duration(self) -> float:
        scale = self.nt if self.duration_scaling == "per_transmitter" else 1
        return self.duration * scale

    @property
    def row_cap(self) -> Optional[int]:
        return None if self.training_length is None else self.training_length - self.n + 1

    def config_hash(self) -> str:
        payload = json.dumps(self.model_dump(mode="json", exclude={"workers"}), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class TrialRecord:
    config_hash: str
    trial: int
    bit_depth: int
    snr_db: float
    method: str
    status: str
    sample_count: int
    rows: int
    sampling_rate_ghz: float
    rsnr_db: float = math.nan
    rsnr_normalized_db: float = math.nan
    support_exact: Optional[bool] = None
    hits: int = 0
    misses: int = 0
    false_alarms: int = 0
    iterations: int = 0
    converged: Optional[bool] = None
    pruned: int = 0
    bound_linear: float = math.nan
    wall_time_s: float = 0.0


@dataclass
class SweepResult:
    config: ExperimentConfig
    config_hash: str
    records: List[TrialRecord]
    aggregates: pd.DataFrame
    optimum: pd.DataFrame
    infeasible: List[int] = field(default_factory=list)

    def write(self, out_dir: Union[str, Path], include_timing: bool = False) -> Dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "records": out / "records.csv",
            "aggregates": out / "aggregates.csv",
            "optimum": out / "optimum.csv",
            "manifest": out / "manifest.json",
        }
        records_frame(self.records, include_timing).to_csv(paths["records"], index=False, float_format="%.6f")
        self.aggregates.to_csv(paths["aggregates"], index=False, float_format="%.6f")
        self.optimum.to_csv(paths["optimum"], index=False, float_format="%.6f")
        paths["manifest"].write_text(json.dumps(manifest(self.config, self.infeasible), sort_keys=True, indent=2))
        logger.info(f"Wrote sweep {self.config_hash} to {out}")
        return paths


@dataclass
class Observation:
    analog: np.ndarray
    quantized: np.ndarray
    one_bit: np.ndarray


def manifest(config: ExperimentConfig, infeasible: Sequence[int] = ()) -> dict:
    return {
        "config": config.model_dump(mode="json"),
        "config_hash": config.config_hash(),
        "master_seed": config.master_seed,
        "version": settings.API_VERSION,
        "snr_definition": SNR_DEFINITION,
        "bound_note": SIGMA_INTERPRETATION,
        "rip_note": RIP_NOTE,
        "infeasible_bit_depths": list(infeasible),
    }


def load_experiment_config(path: Optional[Union[str, Path]] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """
    Read a KEY=value (dotenv style) or JSON experiment file and apply overrides.

    Lists in KEY=value files are comma separated; empty values are ignored.
    """
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"Config file not found: {path}")
        if path.suffix.lower() == ".json":
            values = json.loads(path.read_text())
        else:
            for key, raw in dotenv_values(path).items():
                if raw is None or raw.strip() == "":
                    continue
                name = key.strip().lower()
                if name in ("bit_depth_grid", "snr_grid_db", "m_override"):
                    values[name] = [item.strip() for item in raw.split(",") if item.strip()]
                else:
                    values[name] = raw.strip()
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    try:
        return ExperimentConfig.model_validate(values)
    except ValidationError as exc:
        raise ConfigurationError(f"Invalid experiment config: {exc}") from exc


def adc_points(config: ExperimentConfig) -> List[AdcConfig]:
    """Budget-derived operating points in bit_depth_grid order, with overrides applied."""
    solved = {
        point.bit_depth: point
        for point in solve_budget(config.power_budget, config.walden_c, config.slot_duration, config.bit_depth_grid)
    }
    points = []
    for index, bits in enumerate(config.bit_depth_grid):
        point = solved[bits]
        if config.m_override is not None:
            point = point.model_copy(update={"sample_count": int(config.m_override[index])})
        points.append(point)
    return points


def rows_used(config: ExperimentConfig, point: AdcConfig) -> int:
    cap = config.row_cap
    return point.sample_count if cap is None else min(point.sample_count, cap)


def noise_std(config: ExperimentConfig, rows: int, snr_db: float, pair_energy: float) -> float:
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    snr = 10.0 ** (snr_db / 10.0)
    return math.sqrt(config.nt * pair_energy / (rows * snr))


def measurement_std(config: ExperimentConfig, rows: int, sigma_e: float, pair_energy: float) -> float:
    """Standard deviation of each real component of X h + e under the channel and noise model."""
    return math.sqrt((config.nt * pair_energy / rows + sigma_e ** 2) / 2.0)


def simulate_observation(clean: np.ndarray, sigma_e: float, quantizer, rng: np.random.Generator) -> Observation:
    size = clean.size
    noise = sigma_e * (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2.0)
    analog = clean + noise
    return Observation(analog=analog, quantized=quantize_complex(quantizer, analog), one_bit=one_bit_observation(analog))


def cell_model(config: ExperimentConfig, trial: int, rows: int) -> MeasurementModel:
    pilots = generate_pilots(
        config.nt, rows, config.n, config.pilot_mode, seed=stream_seed(config.master_seed, PILOT_STREAM, trial, rows)
    )
    return build_measurement_model(pilots, config.nt, config.nr, config.n)


def probe_delta(config: ExperimentConfig, rows: int) -> float:
    """Structured delta_hat at order Nt*Nr*K on a representative pilot draw for this row count."""
    pilots = generate_pilots(
        config.nt, rows, config.n, config.pilot_mode, seed=stream_seed(config.master_seed, PROBE_STREAM, rows)
    )
    model = build_measurement_model(pilots, config.nt, config.nr, config.n)
    order = config.nt * config.nr * config.k
    if order > model.cols:
        return math.nan
    estimate = probe_rip(
        model.mimo_matrix.real,
        order,
        config.rip_samples,
        seed=stream_seed(config.master_seed, PROBE_STREAM, rows, 1),
        block_size=config.n,
    )
    logger.info(f"rows={rows}: delta_hat={estimate.delta_hat:.4f} over {estimate.num_samples} samples")
    return estimate.delta_hat


def trial_bound(channel: SparseChannel, model: MeasurementModel, sigma_e: float, quantizer, delta: float) -> float:
    """Linear oracle RSNR bound for the realized support, NaN when it is undefined."""
    if not 0.0 <= delta < 1.0:
        return math.nan
    restricted = model.columns(channel.support).real
    try:
        effective = effective_noise_variance(sigma_e / math.sqrt(2.0), quantizer)
        sigma = sigma_matrix(restricted, math.sqrt(effective))
        report = oracle_rsnr_bound(
            BoundInput(
                channel_energy=channel.real_energy,
                sparsity_order=int(channel.support.size),
                delta=delta,
                noise_std=sigma_e / math.sqrt(2.0),
                quantizer=quantizer,
                restricted_matrix=restricted,
                sigma_matrix=sigma,
            )
        )
    except ToolkitError as exc:
        logger.debug(f"bound unavailable: {exc.message}")
        return math.nan
    return report.linear


def _record_result(base: dict, channel: SparseChannel, result: EstimationResult, elapsed: float) -> TrialRecord:
    plain = rsnr(channel.entries, result.estimate)
    normalized = rsnr(channel.entries, result.estimate, normalize=True)
    metrics = support_metrics(channel.support, result.support)
    return TrialRecord(
        **base,
        method=result.method,
        status="ok",
        rsnr_db=plain.db,
        rsnr_normalized_db=normalized.db,
        support_exact=metrics.exact,
        hits=metrics.hits,
        misses=metrics.misses,
        false_alarms=metrics.false_alarms,
        iterations=result.iterations_used,
        converged=result.converged,
        pruned=result.pruned,
        wall_time_s=elapsed,
    )


def run_trial(
    config: ExperimentConfig,
    trial: int,
    deltas: Dict[int, float],
    run_estimators: bool = True,
) -> List[TrialRecord]:
    """All (bit depth, SNR, method) records of one trial."""
    config_hash = config.config_hash()
    spec = config.channel_spec
    pair_energy = expected_pair_energy(spec)
    channel = generate_channel(spec, stream_seed(config.master_seed, CHANNEL_STREAM, trial))
    cfg = config.biht_config()
    methods = METHODS if run_estimators else ("bound",)
    records: List[TrialRecord] = []

    for point in adc_points(config):
        rows = rows_used(config, point)
        cell = {
            "config_hash": config_hash,
            "trial": trial,
            "bit_depth": point.bit_depth,
            "sample_count": point.sample_count,
            "rows": rows,
            "sampling_rate_ghz": point.sampling_rate / 1e9,
        }
        if rows < 1:
            records.extend(
                TrialRecord(**cell, snr_db=snr, method=method, status="infeasible")
                for snr in config.snr_grid_db for method in methods
            )
            continue
        try:
            model = cell_model(config, trial, rows)
        except ToolkitError as exc:
            logger.error(f"trial {trial}, B={point.bit_depth}: {exc.message}")
            records.extend(
                TrialRecord(**cell, snr_db=snr, method=method, status=f"error:{exc.error_code}")
                for snr in config.snr_grid_db for method in methods
            )
            continue
        clean = model.apply(channel.entries)

        for snr_index, snr_db in enumerate(config.snr_grid_db):
            sigma_e = noise_std(config, rows, snr_db, pair_energy)
            quantizer = design_quantizer(point.bit_depth, measurement_std(config, rows, sigma_e, pair_energy))
            rng = get_rng(stream_seed(config.master_seed, NOISE_STREAM, trial, snr_index, rows))
            observation = simulate_observation(clean, sigma_e, quantizer, rng)
            bound = trial_bound(channel, model, sigma_e, quantizer, deltas.get(rows, math.nan))
            base = {**cell, "snr_db": snr_db, "bound_linear": bound}

            if not run_estimators:
                records.append(TrialRecord(**base, method="bound", status="ok"))
                continue
            runners = {
                "biht_linear": lambda: estimate_biht_linear(observation.quantized, observation.one_bit, model, cfg),
                "oracle_linear": lambda: estimate_oracle(observation.quantized, model, channel.support),
                "least_squares": lambda: estimate_least_squares(observation.quantized, model),
            }
            for method, runner in runners.items():
                started = time.perf_counter()
                try:
                    result = runner()
                except ToolkitError as exc:
                    logger.error(f"trial {trial}, B={point.bit_depth}, SNR={snr_db}, {method}: {exc.message}")
                    records.append(TrialRecord(**base, method=method, status=f"error:{exc.error_code}"))
                    continue
                records.append(_record_result(base, channel, result, time.perf_counter() - started))
    return records


def _run_trial_job(args: tuple) -> List[TrialRecord]:
    config, trial, deltas, run_estimators = args
    return run_trial(config, trial, deltas, run_estimators)


def _collect(config: ExperimentConfig, run_estimators: bool) -> List[TrialRecord]:
    points = adc_points(config)
    deltas = {}
    for point in points:
        rows = rows_used(config, point)
        if rows >= 1 and rows not in deltas:
            try:
                deltas[rows] = probe_delta(config, rows)
            except ToolkitError as exc:
                logger.warning(f"RIP probe failed for rows={rows}: {exc.message}")
                deltas[rows] = math.nan
    jobs = [(config, trial, deltas, run_estimators) for trial in range(config.trials)]
    records: List[TrialRecord] = []
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for chunk in pool.map(_run_trial_job, jobs):
                records.extend(chunk)
    else:
        for job in jobs:
            records.extend(_run_trial_job(job))
    return sort_records(records)


def sort_records(records: Sequence[TrialRecord]) -> List[TrialRecord]:
    return sorted(records, key=lambda r: (r.bit_depth, r.snr_db, r.trial, r.method))


def records_frame(records: Sequence[TrialRecord], include_timing: bool = False) -> pd.DataFrame:
    frame = pd.DataFrame([asdict(record) for record in sort_records(records)])
    if not include_timing and "wall_time_s" in frame:
        frame = frame.drop(columns=["wall_time_s"])
    return frame


def _check_single_config(records: Sequence[TrialRecord]) -> str:
    hashes = {record.config_hash for record in records}
    if len(hashes) != 1:
        raise ConfigurationError(f"cannot aggregate records from {len(hashes)} configurations: {sorted(hashes)}")
    return hashes.pop()


def _bound_db(values: pd.Series) -> float:
    finite = values[np.isfinite(values)]
    if finite.empty:
        return math.nan
    return 10.0 * math.log10(finite.mean())


def aggregate_records(records: Sequence[TrialRecord]) -> pd.DataFrame:
    """Mean RSNR with a 95% t-interval per (bit depth, SNR, method) cell."""
    config_hash = _check_single_config(records)
    frame = records_frame(records)
    keys = ["bit_depth", "snr_db", "method"]
    cells = frame.groupby(keys, sort=True).agg(
        sample_count=("sample_count", "first"),
        rows=("rows", "first"),
        sampling_rate_ghz=("sampling_rate_ghz", "first"),
        status=("status", lambda s: "ok" if (s == "ok").any() else s.iloc[0]),
        bound_db=("bound_linear", _bound_db),
    )
    ok = frame[frame["status"] == "ok"].copy()
    ok["rsnr_db"] = ok["rsnr_db"].clip(-MAX_RSNR_DB, MAX_RSNR_DB)
    ok["rsnr_normalized_db"] = ok["rsnr_normalized_db"].clip(-MAX_RSNR_DB, MAX_RSNR_DB)
    ok["support_exact"] = ok["support_exact"].astype(float)
    stats_frame = ok.groupby(keys, sort=True).agg(
        trials=("rsnr_db", "size"),
        mean_rsnr_db=("rsnr_db", "mean"),
        std_rsnr_db=("rsnr_db", "std"),
        mean_rsnr_normalized_db=("rsnr_normalized_db", "mean"),
        exact_support_rate=("support_exact", "mean"),
        mean_iterations=("iterations", "mean"),
    )
    table = cells.join(stats_frame, how="left").reset_index()
    table["trials"] = table["trials"].fillna(0).astype(int)
    dof = (table["trials"] - 1).clip(lower=1)
    half_width = stats.t.ppf(0.975, dof) * table["std_rsnr_db"] / np.sqrt(table["trials"].clip(lower=1))
    table["ci95_db"] = half_width.where(table["trials"] > 1, 0.0)
    table.insert(0, "config_hash", config_hash)
    columns = [
        "config_hash", "bit_depth", "snr_db", "method", "status", "sampling_rate_ghz", "sample_count", "rows",
        "trials", "mean_rsnr_db", "ci95_db", "std_rsnr_db", "mean_rsnr_normalized_db", "exact_support_rate",
        "mean_iterations", "bound_db",
    ]
    return table[columns]


def optimum_bit_depth(aggregates: pd.DataFrame, method: str = "biht_linear") -> pd.DataFrame:
    """Bit depth with the highest mean RSNR at every SNR."""
    rows = aggregates[(aggregates["method"] == method) & (aggregates["status"] == "ok")]
    rows = rows.dropna(subset=["mean_rsnr_db"])
    if rows.empty:
        return pd.DataFrame(columns=["config_hash", "snr_db", "method", "bit_depth", "mean_rsnr_db"])
    best = rows.loc[rows.groupby("snr_db")["mean_rsnr_db"].idxmax()]
    return best[["config_hash", "snr_db", "method", "bit_depth", "mean_rsnr_db"]].reset_index(drop=True)


def run_sweep(config: ExperimentConfig) -> SweepResult:
    """
    Monte Carlo over the bit-depth and SNR grids.

    Args:
        config: Experiment definition

    Returns:
        SweepResult with sorted trial records, per-cell aggregates and the optimum bit depth per SNR
    """
    config_hash = config.config_hash()
    logger.info(
        f"Sweep {config_hash}: {config.nt}x{config.nr}, N={config.n}, K={config.k}, khat={config.sparsity_target}, "
        f"pilots={config.pilot_mode}, trials={config.trials}, seed={config.master_seed}"
    )
    logger.info(SNR_DEFINITION)
    infeasible = [point.bit_depth for point in adc_points(config) if rows_used(config, point) < 1]
    for bits in infeasible:
        logger.warning(f"B={bits} is infeasible under {config.power_budget} W; cells marked infeasible")
    records = _collect(config, run_estimators=True)
    aggregates = aggregate_records(records)
    return SweepResult(
        config=config,
        config_hash=config_hash,
        records=records,
        aggregates=aggregates,
        optimum=optimum_bit_depth(aggregates),
        infeasible=infeasible,
    )


def emit_table2(
    power_budget: float = settings.POWER_BUDGET_W,
    walden_c: float = settings.WALDEN_C_J,
    duration: float = settings.DURATION_S,
    bit_depths: Sequence[int] = tuple(range(2, 9)),
    verbatim: bool = False,
) -> pd.DataFrame:
    """
    ADC operating points in the layout of the published 20 mW table.

    Formula mode reports M = floor(T * f_s) and flags departures above 5 % from the published
    M row; verbatim mode substitutes the published M values.
    """
    published = math.isclose(power_budget, PUBLISHED_BUDGET_W) and math.isclose(duration, PUBLISHED_DURATION_S)
    rows = []
    for point in solve_budget(power_budget, walden_c, duration, bit_depths):
        reference = PUBLISHED_TABLE.get(point.bit_depth) if published else None
        formula_m = point.sample_count
        row = {
            "bit_depth": point.bit_depth,
            "sampling_rate_ghz": point.sampling_rate / 1e9,
            "sampling_rate_ghz_2sf": float(f"{point.sampling_rate / 1e9:.2g}"),
            "sample_count": formula_m,
            "power_mw": point.power * 1e3,
            "energy_pj": point.energy * 1e12,
            "published_sampling_rate_ghz": reference[0] if reference else math.nan,
            "published_sample_count": reference[1] if reference else math.nan,
            "m_discrepancy": bool(reference) and abs(formula_m - reference[1]) > DISCREPANCY_TOLERANCE * reference[1],
            "note": "",
        }
        if row["m_discrepancy"]:
            logger.warning(f"B={point.bit_depth}: formula M={formula_m} vs published M={reference[1]}")
        if verbatim and reference:
            row["sample_count"] = reference[1]
            row["sampling_rate_ghz"] = reference[0]
            row["sampling_rate_ghz_2sf"] = reference[0]
            row["note"] = f"published values; formula gives f_s={point.sampling_rate / 1e9:.4f} GHz, M={formula_m}"
        rows.append(row)
    return pd.DataFrame(rows)


def emit_bound_overlay(config: ExperimentConfig) -> pd.DataFrame:
    """Oracle RSNR bound per (bit depth, SNR), averaged over the realized supports of all trials."""
    records = _collect(config, run_estimators=False)
    config_hash = _check_single_config(records)
    frame = records_frame(records)
    overlay = frame.groupby(["bit_depth", "snr_db"], sort=True).agg(
        rows=("rows", "first"),
        status=("status", lambda s: "ok" if (s == "ok").any() else s.iloc[0]),
        bound_db=("bound_linear", _bound_db),
        trials=("bound_linear", lambda v: int(np.isfinite(v).sum())),
    ).reset_index()
    overlay.insert(0, "config_hash", config_hash)
    return overlay


def khat_robustness(
    config: ExperimentConfig,
    khat_grid: Sequence[int],
    bit_depth: Optional[int] = None,
    snr_db: Optional[float] = None,
) -> tuple:
    """
    BIHT + linear RSNR against the sparsity target on paired data.

    Returns:
        (per-trial frame, summary frame). The summary carries the mean paired difference to K-hat = K.
    """
    if not khat_grid:
        raise ConfigurationError("khat_grid must not be empty")
    for khat in khat_grid:
        if not 1 <= khat <= config.n:
            raise ConfigurationError(f"khat={khat} outside [1, {config.n}]")
    bits = bit_depth if bit_depth is not None else config.bit_depth_grid[0]
    snr = snr_db if snr_db is not None else config.snr_grid_db[0]
    cell = config.model_copy(update={"bit_depth_grid": [bits], "snr_grid_db": [snr], "m_override": None})
    point = adc_points(cell)[0]
    rows = rows_used(cell, point)
    if rows < 1:
        raise ConfigurationError(f"B={bits} is infeasible under {config.power_budget} W")

    spec = config.channel_spec
    pair_energy = expected_pair_energy(spec)
    config_hash = config.config_hash()
    entries = []
    for trial in range(config.trials):
        channel = generate_channel(spec, stream_seed(config.master_seed, CHANNEL_STREAM, trial))
        model = cell_model(config, trial, rows)
        sigma_e = noise_std(config, rows, snr, pair_energy)
        quantizer = design_quantizer(bits, measurement_std(config, rows, sigma_e, pair_energy))
        rng = get_rng(stream_seed(config.master_seed, NOISE_STREAM, trial, 0, rows))
        observation = simulate_observation(model.apply(channel.entries), sigma_e, quantizer, rng)
        for khat in khat_grid:
            result = estimate_biht_linear(observation.quantized, observation.one_bit, model, config.biht_config(khat))
            metrics = support_metrics(channel.support, result.support)
            entries.append({
                "config_hash": config_hash,
                "khat": int(khat),
                "trial": trial,
                "bit_depth": bits,
                "snr_db": snr,
                "rows": rows,
                "rsnr_db": min(rsnr(channel.entries, result.estimate).db, MAX_RSNR_DB),
                "support_exact": metrics.exact,
                "misses": metrics.misses,
                "false_alarms": metrics.false_alarms,
            })
    trials = pd.DataFrame(entries).sort_values(["khat", "trial"]).reset_index(drop=True)
    summary = trials.groupby("khat", sort=True).agg(
        trials=("rsnr_db", "size"),
        mean_rsnr_db=("rsnr_db", "mean"),
        std_rsnr_db=("rsnr_db", "std"),
        exact_support_rate=("support_exact", "mean"),
    ).reset_index()
    summary["ci95_db"] = stats.t.ppf(0.975, max(config.trials - 1, 1)) * summary["std_rsnr_db"].fillna(0.0) / math.sqrt(config.trials)
    if config.k in set(khat_grid):
        reference = trials[trials["khat"] == config.k].set_index("trial")["rsnr_db"]
        summary["paired_diff_db"] = [
            float((trials[trials["khat"] == khat].set_index("trial")["rsnr_db"] - reference).mean())
            for khat in summary["khat"]
        ]
    else:
        summary["paired_diff_db"] = math.nan
    summary.insert(0, "config_hash", config_hash)
    return trials, summary


def rip_report(config: ExperimentConfig, sparsity_order: Optional[int] = None, num_samples: Optional[int] = None) -> pd.DataFrame:
    """delta_hat of the stacked model and of every Toeplitz block, per bit depth of the grid."""
    samples = num_samples or config.rip_samples
    order = sparsity_order or config.nt * config.nr * config.k
    blocks = config.nt * config.nr
    if order % blocks:
        raise ConfigurationError(f"order {order} is not divisible by {blocks} Tx-Rx pairs")
    rows_seen = set()
    entries = []
    for point in adc_points(config):
        rows = rows_used(config, point)
        if rows < 1 or rows in rows_seen:
            continue
        rows_seen.add(rows)
        pilots = generate_pilots(
            config.nt, rows, config.n, config.pilot_mode, seed=stream_seed(config.master_seed, PROBE_STREAM, rows)
        )
        model = build_measurement_model(pilots, config.nt, config.nr, config.n)
        views = [("stacked", model.mimo_matrix.real, order, config.n)]
        views += [(f"block_{i}", block, order // blocks, None) for i, block in enumerate(model.toeplitz_blocks)]
        for view, matrix, view_order, block_size in views:
            estimate = probe_rip(
                matrix, view_order, samples, seed=stream_seed(config.master_seed, PROBE_STREAM, rows, 1),
                block_size=block_size,
            )
            entries.append({"bit_depth": point.bit_depth, "rows": rows, "view": view, **estimate.to_dict()})
    frame = pd.DataFrame(entries)
    frame.insert(0, "config_hash", config.config_hash())
    return frame
