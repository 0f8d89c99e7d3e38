import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.sparse.linalg import LinearOperator

from services.errors import ConfigurationError
from services.seeding import SeedLike, get_rng

logger = logging.getLogger(__name__)

PilotMode = Literal["iid_random", "exact_orthogonal"]
OperatorPart = Literal["joint", "real", "imag"]


@dataclass
class PilotSet:
    """Nt training sequences of length P = M + N - 1 with entries +-1/sqrt(M)."""

    sequences: np.ndarray
    m: int
    n: int
    mode: str

    @property
    def nt(self) -> int:
        return self.sequences.shape[0]

    @property
    def length(self) -> int:
        return self.m + self.n - 1


@dataclass
class RipEstimate:
    sparsity_order: int
    delta_hat: float
    num_samples: int
    min_eig_seen: float
    max_eig_seen: float
    structured: bool = False

    # Sampling can only miss worse submatrices
    note: str = "delta_hat is a lower bound on the true restricted isometry constant"

    def to_dict(self) -> dict:
        return {
            "sparsity_order": self.sparsity_order,
            "delta_hat": self.delta_hat,
            "num_samples": self.num_samples,
            "min_eig_seen": self.min_eig_seen,
            "max_eig_seen": self.max_eig_seen,
            "structured": self.structured,
            "note": self.note,
        }


def orthogonal_design_minimum(nt: int, n: int) -> tuple:
    """Smallest (M, P) for which the exact orthogonal family exists."""
    m = 2 ** (nt - 1) * n
    return m, m + n - 1


def orthogonal_feasible(nt: int, m: int, n: int) -> bool:
    """True when M is a multiple of 2^(Nt-1) and each period still holds N taps."""
    unit = 2 ** (nt - 1)
    return m % unit == 0 and n <= m // unit


def dependent_columns(matrix: np.ndarray) -> np.ndarray:
    """
    Positions of columns that pivoted QR finds linearly dependent on the others.

    Columns beyond the numerical rank in pivot order are reported, sorted ascending.
    """
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[1] == 0:
        return np.array([], dtype=int)
    _, r, pivots = linalg.qr(matrix, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return np.sort(pivots)
    tol = max(matrix.shape) * np.finfo(float).eps * diag[0]
    rank = int(np.count_nonzero(diag > tol))
    return np.sort(pivots[rank:])


def _random_signs(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.integers(0, 2, size=size) * 2.0 - 1.0


def _orthogonal_family(nt: int, m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    # Sylvester-style doubling: sequence i is anti-periodic with half period M/2^(i+1),
    # the last one is periodic with period M/2^(Nt-1). Their spectra are disjoint.
    unit = 2 ** (nt - 1)
    if not orthogonal_feasible(nt, m, n):
        m_min, p_min = orthogonal_design_minimum(nt, n)
        raise ConfigurationError(
            f"exact_orthogonal pilots infeasible for Nt={nt}, M={m}, N={n}; "
            f"smallest feasible P is {p_min} (M={m_min}, M a multiple of {unit})"
        )
    base = np.empty((nt, m))
    for i in range(nt - 1):
        half = m // 2 ** (i + 1)
        f = _random_signs(rng, half)
        base[i] = np.tile(np.concatenate((f, -f)), 2 ** i)
    base[nt - 1] = np.tile(_random_signs(rng, m // unit), unit)
    # Cyclic prefix of N-1 samples turns every Toeplitz block into a circulant window
    index = (np.arange(m + n - 1) - (n - 1)) % m
    return base[:, index]


def generate_pilots(nt: int, m: int, n: int, mode: PilotMode = "iid_random", seed: SeedLike = None) -> PilotSet:
    """
    Generate Nt real training sequences.

    Args:
        nt: Number of transmit antennas
        m: Rows per receiver (samples per slot)
        n: Channel taps per pair
        mode: "iid_random" fair-coin signs or "exact_orthogonal" family
        seed: Anything accepted by np.random.default_rng

    Returns:
        PilotSet with sequences of length M + N - 1
    """
    if nt < 1 or m < 1 or n < 1:
        raise ConfigurationError(f"Nt, M and N must be positive, got Nt={nt}, M={m}, N={n}")
    rng = get_rng(seed)
    if mode == "iid_random":
        signs = _random_signs(rng, nt * (m + n - 1)).reshape(nt, m + n - 1)
    elif mode == "exact_orthogonal":
        signs = _orthogonal_family(nt, m, n, rng)
    else:
        raise ConfigurationError(f"Unknown pilot mode: {mode}")
    return PilotSet(sequences=signs / np.sqrt(m), m=m, n=n, mode=mode)


@dataclass
class MeasurementModel:
    """
    All views of the stacked measurement matrix.

    toeplitz_blocks has shape (Nt, M, N). Receiver j observes rows j*M ... (j+1)*M - 1,
    and column (j*Nt + i)*N + t belongs to tap t of pair (i, j).
    """

    toeplitz_blocks: np.ndarray
    nr: int

    @property
    def nt(self) -> int:
        return self.toeplitz_blocks.shape[0]

    @property
    def m(self) -> int:
        return self.toeplitz_blocks.shape[1]

    @property
    def n(self) -> int:
        return self.toeplitz_blocks.shape[2]

    @property
    def rows(self) -> int:
        return self.nr * self.m

    @property
    def cols(self) -> int:
        return self.nr * self.nt * self.n

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.toeplitz_blocks)

    @cached_property
    def wide_block(self) -> np.ndarray:
        """[X'_1 ... X'_Nt], the row block seen by every receiver."""
        return np.hstack(list(self.toeplitz_blocks))

    @cached_property
    def mimo_matrix(self) -> np.ndarray:
        return linalg.block_diag(*([self.wide_block] * self.nr))

    @cached_property
    def real_stacked(self) -> tuple:
        real, imag = self.mimo_matrix.real, self.mimo_matrix.imag
        return np.hstack((real, -imag)), np.hstack((imag, real))

    @cached_property
    def joint_real(self) -> np.ndarray:
        return np.vstack(self.real_stacked)

    @cached_property
    def spectral_norm(self) -> float:
        # Block-diagonal with identical blocks, so the norm is that of one block
        return float(np.linalg.norm(self.wide_block, 2))

    def apply(self, h: np.ndarray) -> np.ndarray:
        """y_j = sum_i X'_i h_ij for every receiver, without forming the block-diagonal matrix."""
        h = np.asarray(h)
        if h.shape != (self.cols,):
            raise ConfigurationError(f"channel length {h.shape} does not match model columns {self.cols}")
        stacked = h.reshape(self.nr, self.nt * self.n)
        return (stacked @ self.wide_block.T).reshape(-1)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        if y.shape != (self.rows,):
            raise ConfigurationError(f"observation length {y.shape} does not match model rows {self.rows}")
        return (y.reshape(self.nr, self.m) @ self.wide_block.conj()).reshape(-1)

    def columns(self, index: np.ndarray) -> np.ndarray:
        """Dense copy of the selected columns of the block-diagonal matrix."""
        index = np.asarray(index, dtype=int)
        dtype = complex if not self.is_real else float
        out = np.zeros((self.rows, index.size), dtype=dtype)
        block, tap = np.divmod(index, self.n)
        rx, tx = np.divmod(block, self.nt)
        for col, (j, i, t) in enumerate(zip(rx, tx, tap)):
            out[j * self.m:(j + 1) * self.m, col] = self.toeplitz_blocks[i][:, t]
        return out

    def real_operator(self, part: OperatorPart = "joint") -> LinearOperator:
        """
        Real-valued view acting on h' = [h_R; h_I].

        "joint" is [X1; X2], "real" is X1 and "imag" is X2.
        """
        cols = self.cols

        def to_complex(hp: np.ndarray) -> np.ndarray:
            hp = np.asarray(hp).reshape(-1)
            return hp[:cols] + 1j * hp[cols:]

        def matvec(hp: np.ndarray) -> np.ndarray:
            y = self.apply(to_complex(hp))
            if part == "real":
                return y.real
            if part == "imag":
                return y.imag
            return np.concatenate((y.real, y.imag))

        def rmatvec(u: np.ndarray) -> np.ndarray:
            u = np.asarray(u).reshape(-1)
            if part == "real":
                z = u.astype(complex)
            elif part == "imag":
                z = 1j * u
            else:
                z = u[:self.rows] + 1j * u[self.rows:]
            g = self.adjoint(z)
            return np.concatenate((g.real, g.imag))

        rows = 2 * self.rows if part == "joint" else self.rows
        operator = LinearOperator((rows, 2 * cols), matvec=matvec, rmatvec=rmatvec, dtype=float)
        if self.is_real or part == "joint":
            operator.spectral_norm = self.spectral_norm
        return operator


def build_measurement_model(pilots: PilotSet, nt: int, nr: int, n: int) -> MeasurementModel:
    """Build the Toeplitz blocks X'_i with entry (r, c) = x_{N + r - c} (1-based)."""
    if nr < 1:
        raise ConfigurationError(f"Nr must be positive, got {nr}")
    if pilots.nt != nt or pilots.n != n or pilots.sequences.shape[1] != pilots.m + n - 1:
        raise ConfigurationError(
            f"pilot set (Nt={pilots.nt}, N={pilots.n}, P={pilots.sequences.shape[1]}) "
            f"does not match Nt={nt}, N={n}, P={pilots.m + n - 1}"
        )
    m = pilots.m
    blocks = np.stack([
        linalg.toeplitz(x[n - 1:n - 1 + m], x[n - 1::-1]) for x in pilots.sequences
    ])
    logger.debug(f"Built measurement model: Nt={nt}, Nr={nr}, M={m}, N={n}, mode={pilots.mode}")
    return MeasurementModel(toeplitz_blocks=blocks, nr=nr)


def apply_model(model: MeasurementModel, channel) -> np.ndarray:
    """Noiseless observation for a SparseChannel (or a raw stacked vector)."""
    entries = getattr(channel, "entries", channel)
    return model.apply(entries)


def probe_rip(
    matrix: np.ndarray,
    sparsity_order: int,
    num_samples: int,
    seed: SeedLike = None,
    block_size: Optional[int] = None,
    chunk: int = 64,
) -> RipEstimate:
    """
    Sample s-column submatrices and record the extreme Gram eigenvalues.

    Args:
        matrix: Real or complex matrix whose columns are probed
        sparsity_order: Columns per sampled index set (s)
        num_samples: Number of index sets
        seed: Anything accepted by np.random.default_rng
        block_size: When set, columns form consecutive blocks of this size and each
            index set takes s / (number of blocks) columns from every block

    Returns:
        RipEstimate with delta_hat = max(1 - min_eig, max_eig - 1)
    """
    matrix = np.asarray(matrix)
    cols = matrix.shape[1]
    if sparsity_order < 1 or sparsity_order > cols:
        raise ConfigurationError(f"sparsity order {sparsity_order} outside [1, {cols}]")
    if num_samples < 1:
        raise ConfigurationError("num_samples must be at least 1")
    rng = get_rng(seed)

    if block_size is not None:
        if cols % block_size:
            raise ConfigurationError(f"{cols} columns are not a multiple of block size {block_size}")
        num_blocks = cols // block_size
        if sparsity_order % num_blocks:
            raise ConfigurationError(f"sparsity order {sparsity_order} not divisible by {num_blocks} blocks")
        per_block = sparsity_order // num_blocks
        if per_block > block_size:
            raise ConfigurationError(f"{per_block} columns per block exceed block size {block_size}")
        offsets = np.arange(num_blocks) * block_size

        def draw() -> np.ndarray:
            picks = [rng.choice(block_size, size=per_block, replace=False) + off for off in offsets]
            return np.concatenate(picks)
    else:
        def draw() -> np.ndarray:
            return rng.choice(cols, size=sparsity_order, replace=False)

    index_sets = np.stack([draw() for _ in range(num_samples)])
    lowest, highest = np.inf, -np.inf
    for start in range(0, num_samples, chunk):
        sub = np.moveaxis(matrix[:, index_sets[start:start + chunk]], 0, 1)
        gram = np.conj(np.swapaxes(sub, 1, 2)) @ sub
        eigs = np.linalg.eigvalsh(gram)
        lowest = min(lowest, float(eigs[:, 0].min()))
        highest = max(highest, float(eigs[:, -1].max()))

    delta = max(1.0 - lowest, highest - 1.0, 0.0)
    return RipEstimate(
        sparsity_order=sparsity_order,
        delta_hat=delta,
        num_samples=num_samples,
        min_eig_seen=lowest,
        max_eig_seen=highest,
        structured=block_size is not None,
    )


def export_matrix_csv(model: MeasurementModel, path: Union[str, Path], view: str = "toeplitz") -> Path:
    """Write one matrix view to CSV for offline inspection."""
    if view == "toeplitz":
        frames = []
        for i, block in enumerate(model.toeplitz_blocks):
            frame = pd.DataFrame(np.real_if_close(block))
            frame.insert(0, "row", np.arange(model.m))
            frame.insert(0, "tx", i)
            frames.append(frame)
        table = pd.concat(frames, ignore_index=True)
    elif view == "mimo":
        if not model.is_real:
            raise ConfigurationError("complex mimo view cannot be written as CSV; use joint_real")
        table = pd.DataFrame(model.mimo_matrix)
    elif view == "joint_real":
        table = pd.DataFrame(model.joint_real)
    else:
        raise ConfigurationError(f"Unknown matrix view: {view}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.10g")
    logger.info(f"Wrote {view} view to {path}")
    return path
