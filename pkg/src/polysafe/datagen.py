"""Excitation experiments and the data matrices consumed by synthesis.

A single open-loop trajectory of ``T`` steps is arranged into the input
matrix (m, T), the state snapshots (n, T) before and after each step,
the columnwise remainder of the visited states (N, T), and the stacked
regressor (n+N, T) whose full row rank is the informativity condition
every design method relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import Dictionary, PlantModel
from .errors import TooFewSamplesError, TrajectoryDivergedError
from .polytope import PolyhedralSet, interval_enclosure

RANK_RTOL = 1e-8  # singular values below RANK_RTOL * sigma_max do not count


@dataclass(frozen=True, eq=False)
class ExperimentData:
    """Matrices assembled from one collected trajectory.

    ``true_noise`` retains the disturbance sequence actually injected and is
    used only for diagnostics; synthesis never reads it.  The dictionary
    rides along because it is public knowledge (only the coefficients are
    unknown) and every design method needs to evaluate remainders.
    """

    inputs: np.ndarray        # (m, T)
    states: np.ndarray        # (n, T)
    next_states: np.ndarray   # (n, T)
    remainders: np.ndarray    # (N, T)
    regressor: np.ndarray     # (n + N, T)
    dictionary: Dictionary
    true_noise: np.ndarray | None = None

    def __post_init__(self):
        T = self.inputs.shape[1]
        for name in ("states", "next_states", "remainders", "regressor"):
            if getattr(self, name).shape[1] != T:
                raise ValueError(f"{name} has a different number of columns than inputs")
        n, N = self.states.shape[0], self.remainders.shape[0]
        if T < n + N + 1:
            raise TooFewSamplesError(
                f"need at least n + N + 1 = {n + N + 1} samples, got {T}"
            )
        if not np.array_equal(self.regressor, np.vstack([self.states, self.remainders])):
            raise ValueError("regressor must be states stacked over remainders")

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[1]

    @property
    def state_dim(self) -> int:
        return self.states.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_terms(self) -> int:
        return self.remainders.shape[0]

    def export_csv(self, out_dir) -> list[Path]:
        """One CSV per matrix, row-major, 17 significant digits."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        matrices = {
            "inputs": self.inputs,
            "states": self.states,
            "next_states": self.next_states,
            "remainders": self.remainders,
            "regressor": self.regressor,
        }
        if self.true_noise is not None:
            matrices["true_noise"] = self.true_noise
        for name, mat in matrices.items():
            path = out_dir / f"{name}.csv"
            with open(path, "w") as handle:
                for row in np.atleast_2d(mat):
                    handle.write(",".join(f"{v:.17g}" for v in row) + "\n")
            written.append(path)
        return written


def collect(plant: PlantModel, n_samples: int, u_max: float, x0, seed: int,
            with_noise: bool = False, safe_set: PolyhedralSet | None = None,
            require_in_set: bool = False) -> ExperimentData:
    """Run one excitation experiment and assemble the data matrices.

    Inputs are uniform on [-u_max, u_max]^m, disturbances (when enabled)
    uniform on [-w_bound, w_bound]^n; both streams are drawn up front from
    ``seed`` (inputs first), so the experiment is deterministic.

    ``require_in_set`` aborts with :class:`TrajectoryDivergedError` as soon
    as the state leaves twice the interval enclosure of ``safe_set``;
    collection itself never insists the trajectory stays safe.
    """
    n = plant.state_dim
    m = plant.input_dim
    N = plant.dictionary.n_terms
    if n_samples < n + N + 1:
        raise TooFewSamplesError(
            f"need at least n + N + 1 = {n + N + 1} samples, got {n_samples}"
        )
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(-u_max, u_max, size=(n_samples, m))
    if with_noise and plant.w_bound > 0.0:
        noise = rng.uniform(-plant.w_bound, plant.w_bound, size=(n_samples, n))
    else:
        noise = np.zeros((n_samples, n))

    guard_box = None
    if require_in_set:
        if safe_set is None:
            raise ValueError("require_in_set needs a safe_set")
        guard_box = interval_enclosure(safe_set)

    x = np.asarray(x0, dtype=float).reshape(-1)
    states = np.empty((n_samples + 1, n))
    states[0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(n_samples):
            x = plant.step(x, inputs[t], noise[t])
            states[t + 1] = x
            if not np.all(np.isfinite(x)):
                raise TrajectoryDivergedError(f"state became non-finite at step {t + 1}")
            if guard_box is not None and (
                    np.any(x < 2.0 * guard_box.lo) or np.any(x > 2.0 * guard_box.hi)):
                raise TrajectoryDivergedError(
                    f"state {x} left twice the enclosure box at step {t + 1}"
                )

    before = states[:-1]
    remainders = plant.dictionary.remainder(before)
    return ExperimentData(
        inputs=inputs.T.copy(),
        states=before.T.copy(),
        next_states=states[1:].T.copy(),
        remainders=remainders.T.copy(),
        regressor=np.vstack([before.T, remainders.T]),
        dictionary=plant.dictionary,
        true_noise=noise.T.copy() if with_noise else None,
    )


def collect_informative(plant: PlantModel, n_samples: int, u_max: float, x0, seed: int,
                        with_noise: bool = False, max_attempts: int = 10,
                        safe_set: PolyhedralSet | None = None,
                        require_in_set: bool = False) -> ExperimentData:
    """Collect, re-drawing with incremented seeds until the regressor has full row rank.

    Operationalizes the informativity assumption: up to ``max_attempts``
    experiments with seeds ``seed, seed + 1, ...`` are tried; the first whose
    regressor passes :func:`regressor_rank` wins.
    """
    last_diag = None
    for attempt in range(max_attempts):
        try:
            data = collect(plant, n_samples, u_max, x0, seed + attempt,
                           with_noise=with_noise, safe_set=safe_set,
                           require_in_set=require_in_set)
        except TrajectoryDivergedError:
            continue
        diag = regressor_rank(data)
        if diag.full_row_rank:
            return data
        last_diag = diag
    raise TrajectoryDivergedError(
        f"no informative experiment in {max_attempts} attempts "
        f"(last rank diagnostic: {last_diag})"
    )


@dataclass(frozen=True)
class RankDiagnostic:
    rank: int
    required: int
    full_row_rank: bool
    threshold: float
    singular_values: np.ndarray

    def __str__(self):
        return (f"rank {self.rank}/{self.required} "
                f"(threshold {self.threshold:.3e}, "
                f"sigma_min {self.singular_values[-1]:.3e})")


def _numerical_rank(mat: np.ndarray, required: int) -> RankDiagnostic:
    sv = np.linalg.svd(mat, compute_uv=False)
    smax = float(sv[0]) if sv.size else 0.0
    threshold = RANK_RTOL * smax
    rank = int(np.sum(sv > threshold)) if smax > 0.0 else 0
    return RankDiagnostic(
        rank=rank,
        required=required,
        full_row_rank=rank == required,
        threshold=threshold,
        singular_values=sv,
    )


def regressor_rank(data: ExperimentData) -> RankDiagnostic:
    """Numerical row rank of the stacked state/remainder regressor (n + N rows)."""
    return _numerical_rank(data.regressor, data.state_dim + data.n_terms)


def identification_rank(data: ExperimentData) -> RankDiagnostic:
    """Row rank of inputs stacked over the regressor (m + n + N rows).

    Full rank here means the dynamics could be identified exactly from the
    noiseless data; only the remainder-minimization baseline needs it.
    """
    stacked = np.vstack([data.inputs, data.states, data.remainders])
    return _numerical_rank(stacked, data.input_dim + data.state_dim + data.n_terms)
