"""Controller synthesis from data: the primal-dual design, its
disturbance-robust variant, and the remainder-minimization baseline.

All three methods parameterize the closed loop through a right inverse
of the data regressor: whenever ``regressor @ [g1 g2] = I``, the
products ``next_states @ g1`` and ``next_states @ g2`` equal the
closed-loop linear part and the closed-loop remainder part exactly (on
noiseless data), so the feasibility programs below constrain the closed
loop directly without identifying the plant.

The primal-dual design ("thm2" in scenario files) couples a nonnegative
row-multiplier matrix with a slope condition on the closed-loop
remainder at a chosen expansion point, plus a curvature condition that
is encoded as strict diagonal dominance (an LP-expressible sufficient
condition for positive definiteness) and re-verified afterwards with
exact eigenvalues.  The robust variant ("cor2") adds a norm budget that
accounts for noise leakage through the data matrices.  The baseline
("thm1") performs a direct search for the remainder-minimizing gain and
then solves the classical row-multiplier program with the searched
remainder bound subtracted.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import lpcore
from .datagen import ExperimentData, identification_rank, regressor_rank
from .dynamics import ExpansionPoint, expansion_point
from .errors import (
    ExpansionPointSearchFailedError,
    NoFeasibleContractionError,
    PolysafeError,
    RankDeficientDataError,
    SynthesisInfeasibleError,
)
from .polytope import PolyhedralSet, enumerate_vertices, interval_enclosure, sample_grid

TOL_CERT = 1e-6   # certificate equations are re-verified to this tolerance

METHODS = ("thm2", "cor2", "thm1")
DEFINITENESS_MODES = ("strict", "active-rows", "off")


def row_norms(normals: np.ndarray, kind: str = "one") -> np.ndarray:
    """Per-row norms of the constraint normals used in disturbance offsets.

    ``one`` gives the sound worst case of ``row @ w`` over ``|w|_inf <= 1``;
    ``inf`` (the max-entry reading) is offered for literal reproduction of
    the norm-budget formula but underestimates multi-axis disturbances.
    """
    normals = np.asarray(normals, dtype=float)
    if kind == "one":
        return np.abs(normals).sum(axis=1)
    if kind == "inf":
        return np.abs(normals).max(axis=1)
    raise ValueError(f"row norm must be 'one' or 'inf', got {kind!r}")


# ---------------------------------------------------------------------------
# result containers


@dataclass(frozen=True, eq=False)
class Controller:
    """Feedback gains plus the data-side variables that generated them.

    The control law is ``u = k1 x + k2 remainder(x)``.  ``g1``/``g2`` are the
    right-inverse columns; ``k1 = inputs @ g1`` and ``k2 = inputs @ g2`` hold
    by construction for synthesized controllers.
    """

    k1: np.ndarray  # (m, n)
    k2: np.ndarray  # (m, N)
    g1: np.ndarray  # (T, n)
    g2: np.ndarray  # (T, N)

    def __post_init__(self):
        for name in ("k1", "k2", "g1", "g2"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), float)))

    def data_residuals(self, data: ExperimentData) -> dict[str, float]:
        """Consistency of the gains with the data they were built from."""
        stacked = np.hstack([self.g1, self.g2])
        eye = np.eye(data.state_dim + data.n_terms)
        return {
            "right_inverse": float(np.max(np.abs(data.regressor @ stacked - eye))),
            "gain_k1": float(np.max(np.abs(data.inputs @ self.g1 - self.k1))),
            "gain_k2": float(np.max(np.abs(data.inputs @ self.g2 - self.k2))),
        }


@dataclass(frozen=True, eq=False)
class SynthesisCertificate:
    """Everything needed to replay a successful synthesis.

    ``set_multiplier`` is the nonnegative matrix pairing each safe-set row
    with the rows bounding its closed-loop image; ``slope_term`` holds the
    per-row slope of the closed-loop remainder at the expansion point.
    ``residuals`` are recomputed from raw matrices after the solve, never
    read back from the LP.  ``definiteness_margins`` stores the exact
    smallest eigenvalue of each row's curvature matrix; ``enforced_rows``
    flags the rows whose curvature condition was part of the program.
    """

    method: str
    contraction: float
    set_multiplier: np.ndarray        # (s, s), >= 0
    slope_term: np.ndarray            # (s, n)
    noise_margin: float               # 0 in the noiseless design
    expansion: ExpansionPoint
    residuals: dict[str, float]
    definiteness_margins: np.ndarray  # (s,)
    enforced_rows: np.ndarray         # (s,) bool
    zeroed_rows: np.ndarray           # (s,) bool
    margin: float | None              # achieved uniform slack, margin objective only
    config: dict = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else 0.0

    def satisfied(self, tol: float = TOL_CERT, dd_margin: float | None = None) -> bool:
        ok = self.max_residual <= tol
        ok = ok and float(np.min(self.set_multiplier)) >= -1e-9
        if dd_margin is not None and np.any(self.enforced_rows):
            ok = ok and float(np.min(self.definiteness_margins[self.enforced_rows])) >= dd_margin / 2.0
        return ok


@dataclass(frozen=True, eq=False)
class BaselineSearch:
    """Outcome of the direct search for the remainder-minimizing gain."""

    k2: np.ndarray           # (m, N) winner
    g2: np.ndarray           # (T, N) recovered right-inverse columns
    row_bounds: np.ndarray   # (s,) grid maxima of the remainder term at the winner
    candidates: np.ndarray   # (k, m*N)
    scores: np.ndarray       # (k,)
    chosen: int
    x_resolution: tuple


@dataclass(frozen=True, eq=False)
class BaselineResult:
    controller: Controller
    row_bounds: np.ndarray       # (s,)
    set_multiplier: np.ndarray   # (s, s)
    search: BaselineSearch
    contraction: float
    margin: float | None
    residuals: dict[str, float] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# exact smallest eigenvalue of a symmetric matrix


def smallest_eigenvalue(matrix: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix.

    Uses the characteristic polynomial in closed form up to 3x3 and cyclic
    Jacobi sweeps above that, so the definiteness check does not share code
    with any LP machinery it is auditing.
    """
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    n = M.shape[0]
    if n == 1:
        return float(M[0, 0])
    if n == 2:
        half_tr = 0.5 * (M[0, 0] + M[1, 1])
        disc = math.sqrt(max(0.25 * (M[0, 0] - M[1, 1]) ** 2 + M[0, 1] * M[1, 0], 0.0))
        return float(half_tr - disc)
    if n == 3:
        p1 = M[0, 1] ** 2 + M[0, 2] ** 2 + M[1, 2] ** 2
        q = np.trace(M) / 3.0
        if p1 == 0.0:
            return float(min(M[0, 0], M[1, 1], M[2, 2]))
        p2 = sum((M[i, i] - q) ** 2 for i in range(3)) + 2.0 * p1
        p = math.sqrt(p2 / 6.0)
        B = (M - q * np.eye(3)) / p
        r = float(np.linalg.det(B)) / 2.0
        r = min(1.0, max(-1.0, r))
        phi = math.acos(r) / 3.0
        return float(q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0))
    return _jacobi_smallest(M)


def _jacobi_smallest(M: np.ndarray, sweeps: int = 50) -> float:
    A = np.array(M, dtype=float, copy=True)
    n = A.shape[0]
    target = 1e-14 * max(1.0, float(np.max(np.abs(A))))
    for _ in range(sweeps):
        off = math.sqrt(float(np.sum(np.tril(A, -1) ** 2)))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) <= target / n:
                    continue
                theta = 0.5 * math.atan2(2.0 * A[p, q], A[q, q] - A[p, p])
                c, s = math.cos(theta), math.sin(theta)
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                A = rot.T @ A @ rot
    return float(np.min(np.diag(A)))


# ---------------------------------------------------------------------------
# structural analysis of the safe set rows


def antipodal_pairs(normals: np.ndarray, tol: float = 1e-9) -> list[tuple[int, int]]:
    """Pairs (i, j), i < j, whose normals point in exactly opposite directions.

    For such a pair the curvature matrices of the two rows are negatives of
    each other, so both cannot be strictly definite; the active-rows mode
    zeroes their remainder coefficients instead.
    """
    normals = np.asarray(normals, dtype=float)
    units = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    pairs = []
    taken = set()
    for i in range(len(units)):
        if i in taken:
            continue
        for j in range(i + 1, len(units)):
            if j in taken:
                continue
            if np.max(np.abs(units[i] + units[j])) <= tol:
                pairs.append((i, j))
                taken.update((i, j))
                break
    return pairs


def _definiteness_plan(normals: np.ndarray, mode: str) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Which rows get the dominance constraint, which get zeroed coefficients.

    Returns (enforced mask, zeroed mask, list of zero-constraint representatives).
    """
    s = normals.shape[0]
    if mode not in DEFINITENESS_MODES:
        raise ValueError(f"definiteness mode must be one of {DEFINITENESS_MODES}, got {mode!r}")
    enforced = np.zeros(s, dtype=bool)
    zeroed = np.zeros(s, dtype=bool)
    reps: list[int] = []
    if mode == "off":
        return enforced, zeroed, reps
    if mode == "strict":
        enforced[:] = True
        return enforced, zeroed, reps
    pairs = antipodal_pairs(normals)
    for i, j in pairs:
        zeroed[i] = zeroed[j] = True
        reps.append(i)
    enforced = ~zeroed
    return enforced, zeroed, reps


# ---------------------------------------------------------------------------
# the core feasibility program


def _build_and_solve(data: ExperimentData, safe_set: PolyhedralSet, contraction: float,
                     exp: ExpansionPoint, dd_margin: float, objective: str,
                     definiteness: str, robust: dict | None) -> tuple:
    F = safe_set.normals
    g = safe_set.offsets
    s, n = F.shape
    N = data.n_terms
    T = data.n_samples
    x_next = data.next_states
    regressor = data.regressor
    f_next = F @ x_next                      # (s, T)
    slope_at = exp.slope                    # (N, n)
    curv = exp.curvatures             # (N, n, n)
    anchor = exp.anchor

    enforced, zeroed, reps = _definiteness_plan(F, definiteness)

    # The robust program needs |entries| of the right-inverse columns, so
    # there the columns are modeled as explicit nonnegative sign splits
    # (p - m); the noiseless program keeps them as plain free blocks.
    split = robust is not None
    lp = lpcore.LinearProgram()
    if split:
        lp.add_block("g1_pos", (T, n), nonneg=True)
        lp.add_block("g1_neg", (T, n), nonneg=True)
        lp.add_block("g2_pos", (T, N), nonneg=True)
        lp.add_block("g2_neg", (T, N), nonneg=True)
    else:
        lp.add_block("g1", (T, n))
        lp.add_block("g2", (T, N))
    lp.add_block("mult", (s, s), nonneg=True)
    lp.add_block("slope", (s, n))
    with_margin = objective == "margin"
    if with_margin:
        # slack is sign-restricted so a margin solve is feasible exactly when
        # the plain conditions are; the cap keeps the objective bounded
        lp.add_block("slack", (), nonneg=True)
        lp.add_constraint({"slack": 1.0}, "<=", contraction * float(np.min(g)))

    def with_g1(coeff, extra=None):
        out = dict(extra) if extra else {}
        if split:
            out["g1_pos"] = coeff
            out["g1_neg"] = -np.asarray(coeff)
        else:
            out["g1"] = coeff
        return out

    def with_g2(coeff, extra=None):
        out = dict(extra) if extra else {}
        if split:
            out["g2_pos"] = coeff
            out["g2_neg"] = -np.asarray(coeff)
        else:
            out["g2"] = coeff
        return out

    if robust is not None:
        lp.add_block("noise", ())
        lp.add_block("norm1", ())
        lp.add_block("norm2", ())

    # (i) contraction rows: mult @ g + slope @ anchor (+ noise) (+ slack) <= level * g
    for i in range(s):
        terms: dict = {}
        ps_coeff = np.zeros((s, s))
        ps_coeff[i, :] = g
        px_coeff = np.zeros((s, n))
        px_coeff[i, :] = anchor
        terms["mult"] = ps_coeff
        terms["slope"] = px_coeff
        if robust is not None:
            terms["noise"] = 1.0
        if with_margin:
            terms["slack"] = 1.0
        lp.add_constraint(terms, "<=", contraction * g[i])

    # (ii) multiplier rows map through the set: mult @ F - F @ x_next @ g1 = slope
    for i in range(s):
        for k in range(n):
            ps_coeff = np.zeros((s, s))
            ps_coeff[i, :] = F[:, k]
            g1_coeff = np.zeros((T, n))
            g1_coeff[:, k] = -f_next[i]
            px_coeff = np.zeros((s, n))
            px_coeff[i, k] = -1.0
            lp.add_constraint(with_g1(g1_coeff, {"mult": ps_coeff, "slope": px_coeff}), "=", 0.0)

    # (iii) remainder slope rows: F @ x_next @ g2 @ slope_at = slope
    for i in range(s):
        for k in range(n):
            g2_coeff = np.outer(f_next[i], slope_at[:, k])
            px_coeff = np.zeros((s, n))
            px_coeff[i, k] = -1.0
            lp.add_constraint(with_g2(g2_coeff, {"slope": px_coeff}), "=", 0.0)

    # (iv) right inverse: regressor @ [g1 g2] = I
    eye = np.eye(n + N)
    for r in range(n + N):
        for c in range(n + N):
            if c < n:
                coeff = np.zeros((T, n))
                coeff[:, c] = regressor[r]
                lp.add_constraint(with_g1(coeff), "=", eye[r, c])
            else:
                coeff = np.zeros((T, N))
                coeff[:, c - n] = regressor[r]
                lp.add_constraint(with_g2(coeff), "=", eye[r, c])

    # (v) curvature: for enforced rows the matrix -sum_j coeff_j curv_j must be
    # symmetric strictly diagonally dominant with margin dd_margin (a sufficient
    # LP-expressible condition for positive definiteness); paired rows instead
    # get their remainder coefficients pinned to zero.
    def _entry_coeff(i: int, k: int, l: int) -> np.ndarray:
        # coefficient array over G2 for entry (k, l) of row i's curvature matrix
        return -np.outer(f_next[i], curv[:, k, l])

    enforced_idx = np.flatnonzero(enforced)
    if enforced_idx.size and n > 1:
        lp.add_block("dom_abs", (enforced_idx.size, n, n), nonneg=True)
    for r, i in enumerate(enforced_idx):
        for k in range(n):
            extra = None
            if n > 1:
                dd_coeff = np.zeros((enforced_idx.size, n, n))
                for l in range(n):
                    if l != k:
                        dd_coeff[r, min(k, l), max(k, l)] -= 1.0
                extra = {"dom_abs": dd_coeff}
            lp.add_constraint(with_g2(_entry_coeff(i, k, k), extra), ">=", dd_margin)
        for k in range(n):
            for l in range(k + 1, n):
                unit = np.zeros((enforced_idx.size, n, n))
                unit[r, k, l] = 1.0
                entry = _entry_coeff(i, k, l)
                lp.add_constraint(with_g2(-entry, {"dom_abs": unit}), ">=", 0.0)
                lp.add_constraint(with_g2(entry, {"dom_abs": unit}), ">=", 0.0)
    for i in reps:
        for j in range(N):
            coeff = np.zeros((T, N))
            coeff[:, j] = f_next[i]
            lp.add_constraint(with_g2(coeff), "=", 0.0)

    # robust extras: norm budget tying the noise leakage to eta; the split
    # blocks make |G| available as p + m without extra absolute-value rows
    if robust is not None:
        gm = robust["w_bound"] * float(np.max(row_norms(F, robust["row_norm"])))
        lip = robust["lipschitz"]
        mx = robust["state_bound"]
        for t in range(T):
            mask1 = np.zeros((T, n))
            mask1[t, :] = 1.0
            lp.add_constraint({"g1_pos": mask1, "g1_neg": mask1, "norm1": -1.0}, "<=", 0.0)
            mask2 = np.zeros((T, N))
            mask2[t, :] = 1.0
            lp.add_constraint({"g2_pos": mask2, "g2_neg": mask2, "norm2": -1.0}, "<=", 0.0)
        scale = gm * mx * T
        lp.add_constraint({"norm1": scale, "norm2": scale * lip, "noise": -1.0}, "<=", -scale)

    if with_margin:
        lp.set_objective("max", {"slack": 1.0})

    outcome = lp.solve()
    if split and outcome.status in (lpcore.LpStatus.OPTIMAL, lpcore.LpStatus.FEASIBLE):
        outcome.assignment["g1"] = outcome["g1_pos"] - outcome["g1_neg"]
        outcome.assignment["g2"] = outcome["g2_pos"] - outcome["g2_neg"]
    return outcome, enforced, zeroed


def _certificate(data: ExperimentData, safe_set: PolyhedralSet, controller: Controller,
                 exp: ExpansionPoint, contraction: float, outcome: lpcore.LpOutcome,
                 enforced: np.ndarray, zeroed: np.ndarray, method: str,
                 robust: dict | None, config: dict) -> SynthesisCertificate:
    F = safe_set.normals
    g = safe_set.offsets
    regressor = data.regressor
    x_next = data.next_states
    mult = outcome["mult"]
    slope_rows = outcome["slope"]
    eta = outcome.value("noise") if robust is not None else 0.0

    stacked = np.hstack([controller.g1, controller.g2])
    coeffs = F @ x_next @ controller.g2                       # (s, N) remainder coefficients
    residuals = {
        "contraction": float(np.max(np.maximum(
            mult @ g + slope_rows @ exp.anchor + eta - contraction * g, 0.0))),
        "multiplier_match": float(np.max(np.abs(mult @ F - F @ x_next @ controller.g1 - slope_rows))),
        "slope_match": float(np.max(np.abs(coeffs @ exp.slope - slope_rows))),
        "right_inverse": float(np.max(np.abs(
            regressor @ stacked - np.eye(data.state_dim + data.n_terms)))),
        "multiplier_sign": float(max(0.0, -np.min(mult))),
    }
    if robust is not None:
        gm = robust["w_bound"] * float(np.max(row_norms(F, robust["row_norm"])))
        budget = gm * robust["state_bound"] * data.n_samples * (
            _norm_inf(controller.g1) + robust["lipschitz"] * _norm_inf(controller.g2) + 1.0)
        residuals["noise_budget"] = float(max(0.0, budget - eta))
    if np.any(zeroed):
        residuals["remainder_zeroed"] = float(np.max(np.abs(coeffs[zeroed])))

    margins = np.array([
        smallest_eigenvalue(-np.einsum("j,jkl->kl", coeffs[i], exp.curvatures))
        for i in range(F.shape[0])
    ])
    margin = None
    if outcome.objective is not None:
        margin = float(outcome.objective)
    return SynthesisCertificate(
        method=method,
        contraction=contraction,
        set_multiplier=mult,
        slope_term=slope_rows,
        noise_margin=float(eta),
        expansion=exp,
        residuals=residuals,
        definiteness_margins=margins,
        enforced_rows=enforced,
        zeroed_rows=zeroed,
        margin=margin,
        config=config,
    )


def _norm_inf(mat: np.ndarray) -> float:
    """Induced infinity norm: largest absolute row sum."""
    return float(np.max(np.abs(np.atleast_2d(mat)).sum(axis=1)))


def _resolve_expansion(data: ExperimentData, safe_set: PolyhedralSet, contraction, expansion,
                       dd_margin, objective, definiteness, robust, seed) -> ExpansionPoint:
    if isinstance(expansion, ExpansionPoint):
        return expansion
    if isinstance(expansion, str):
        if expansion != "auto":
            raise ValueError(f"expansion must be a point, an ExpansionPoint or 'auto', got {expansion!r}")
        return pick_expansion_point(data, safe_set, contraction, dd_margin=dd_margin,
                                    objective=objective, definiteness=definiteness,
                                    robust=robust, seed=seed)
    return expansion_point(data.dictionary, np.asarray(expansion, dtype=float), safe_set)


def _check_regressor(data: ExperimentData) -> None:
    diag = regressor_rank(data)
    if not diag.full_row_rank:
        raise RankDeficientDataError(f"regressor is rank deficient: {diag}", diag)


def synthesize_noiseless(data: ExperimentData, safe_set: PolyhedralSet, contraction: float,
                         expansion="auto", dd_margin: float = 1e-6, objective: str = "margin",
                         definiteness: str = "active-rows", seed: int = 0,
                         ) -> tuple[Controller, SynthesisCertificate]:
    """Primal-dual design assuming the data were collected without noise.

    Raises :class:`SynthesisInfeasibleError` with the phase-1 certificate if
    the program has no solution at this contraction level.
    """
    if not 0.0 < contraction <= 1.0:
        raise ValueError(f"contraction must be in (0, 1], got {contraction}")
    if dd_margin <= 0.0:
        raise ValueError("dd_margin must be positive")
    _check_regressor(data)
    exp = _resolve_expansion(data, safe_set, contraction, expansion, dd_margin,
                             objective, definiteness, None, seed)
    outcome, enforced, zeroed = _build_and_solve(
        data, safe_set, contraction, exp, dd_margin, objective, definiteness, None)
    if outcome.status == lpcore.LpStatus.INFEASIBLE:
        raise SynthesisInfeasibleError(
            f"noiseless design infeasible at contraction {contraction} "
            f"(phase-1 infeasibility {outcome.infeasibility:.3e})", outcome)
    controller = Controller(
        k1=data.inputs @ outcome["g1"], k2=data.inputs @ outcome["g2"],
        g1=outcome["g1"], g2=outcome["g2"])
    config = {"method": "thm2", "contraction": contraction, "dd_margin": dd_margin,
              "objective": objective, "definiteness": definiteness}
    cert = _certificate(data, safe_set, controller, exp, contraction, outcome,
                        enforced, zeroed, "thm2", None, config)
    return controller, cert


def synthesize_robust(data: ExperimentData, safe_set: PolyhedralSet, contraction: float,
                      w_bound: float, lipschitz: float | None = None,
                      state_bound: float | None = None, expansion="auto",
                      dd_margin: float = 1e-6, objective: str = "margin",
                      definiteness: str = "active-rows", row_norm: str = "one",
                      seed: int = 0) -> tuple[Controller, SynthesisCertificate]:
    """Noise-aware variant: adds a uniform offset covering disturbance leakage.

    The offset must dominate ``gm * state_bound * T * (|G1| + L |G2| + 1)``
    with ``gm = w_bound * max_i rownorm(F_i)``; the bound is conservative in
    the sample count, so small contraction levels become infeasible quickly
    as ``T`` or ``w_bound`` grow.  ``lipschitz`` and ``state_bound`` default
    to the interval-arithmetic bound and enclosure bound of the safe set.
    """
    if not 0.0 < contraction <= 1.0:
        raise ValueError(f"contraction must be in (0, 1], got {contraction}")
    if w_bound < 0.0:
        raise ValueError("w_bound must be non-negative")
    _check_regressor(data)
    box = interval_enclosure(safe_set)
    if lipschitz is None:
        lipschitz = data.dictionary.lipschitz_bound(box)
    if state_bound is None:
        state_bound = box.max_abs
    robust = {"w_bound": float(w_bound), "lipschitz": float(lipschitz),
              "state_bound": float(state_bound), "row_norm": row_norm}
    row_norms(safe_set.normals, row_norm)  # validate the kind early
    exp = _resolve_expansion(data, safe_set, contraction, expansion, dd_margin,
                             objective, definiteness, robust, seed)
    outcome, enforced, zeroed = _build_and_solve(
        data, safe_set, contraction, exp, dd_margin, objective, definiteness, robust)
    if outcome.status == lpcore.LpStatus.INFEASIBLE:
        raise SynthesisInfeasibleError(
            f"robust design infeasible at contraction {contraction} "
            f"(phase-1 infeasibility {outcome.infeasibility:.3e})", outcome)
    controller = Controller(
        k1=data.inputs @ outcome["g1"], k2=data.inputs @ outcome["g2"],
        g1=outcome["g1"], g2=outcome["g2"])
    config = {"method": "cor2", "contraction": contraction, "dd_margin": dd_margin,
              "objective": objective, "definiteness": definiteness,
              "row_norm": row_norm, **{k: robust[k] for k in
                                       ("w_bound", "lipschitz", "state_bound")}}
    cert = _certificate(data, safe_set, controller, exp, contraction, outcome,
                        enforced, zeroed, "cor2", robust, config)
    return controller, cert


# ---------------------------------------------------------------------------
# expansion point search


def pick_expansion_point(data: ExperimentData, safe_set: PolyhedralSet, contraction: float,
                         dd_margin: float = 1e-6, objective: str = "feasible",
                         definiteness: str = "active-rows", robust: dict | None = None,
                         seed: int = 0, n_random: int = 20) -> ExpansionPoint:
    """First candidate expansion point whose program is feasible.

    Candidates, in order: each vertex scaled by 0.25, the vertex centroid
    scaled by 0.5, then ``n_random`` seeded interior rejection samples.
    Zero candidates are skipped (the slope condition needs a nonzero point).
    Deterministic for a fixed seed.
    """
    vertices = enumerate_vertices(safe_set)
    candidates = [0.25 * v for v in vertices]
    centroid = 0.5 * np.mean(np.array(vertices), axis=0)
    candidates.append(centroid)
    box = interval_enclosure(safe_set)
    rng = np.random.default_rng(seed)
    found = 0
    while found < n_random:
        p = rng.uniform(box.lo, box.hi)
        if safe_set.contains(p, scale=0.9):
            candidates.append(p)
            found += 1
    attempts = []
    for cand in candidates:
        if float(np.max(np.abs(cand))) <= 1e-12:
            attempts.append((cand, "skipped: zero point"))
            continue
        try:
            exp = expansion_point(data.dictionary, cand, safe_set)
            outcome, _, _ = _build_and_solve(
                data, safe_set, contraction, exp, dd_margin, objective, definiteness, robust)
        except (PolysafeError, np.linalg.LinAlgError) as err:
            attempts.append((cand, f"error: {err}"))
            continue
        if outcome.status in (lpcore.LpStatus.OPTIMAL, lpcore.LpStatus.FEASIBLE):
            return exp
        attempts.append((cand, f"infeasible ({outcome.infeasibility:.3e})"))
    raise ExpansionPointSearchFailedError(
        f"no feasible expansion point among {len(candidates)} candidates", attempts)


# ---------------------------------------------------------------------------
# remainder-minimization baseline


def baseline_search(data: ExperimentData, safe_set: PolyhedralSet,
                    k2_lo: float = -2.0, k2_hi: float = 2.0, k2_step: float = 0.1,
                    x_resolution=(101, 101)) -> BaselineSearch:
    """Direct search for the gain minimizing the worst-row remainder term.

    For every candidate gain on the grid, the matching right-inverse columns
    are recovered from the stacked data (which must have full row rank, a
    strictly stronger condition than the regressor rank), the remainder term
    is maximized over a deterministic state grid plus the vertices, and the
    candidate with the smallest worst-row maximum wins (first on ties).
    """
    diag = identification_rank(data)
    if not diag.full_row_rank:
        raise RankDeficientDataError(
            f"stacked input/regressor matrix is rank deficient: {diag}", diag)
    F = safe_set.normals
    n, N, m = data.state_dim, data.n_terms, data.input_dim
    points = sample_grid(safe_set, x_resolution)
    points = np.vstack([points, np.array(enumerate_vertices(safe_set))])
    rem = data.dictionary.remainder(points)          # (k, N)
    f_next = F @ data.next_states                       # (s, T)

    stacked = np.vstack([data.regressor, data.inputs])
    pinv = np.linalg.pinv(stacked)                   # (T, n+N+m)
    e2 = np.zeros((n + N, N))
    e2[n:, :] = np.eye(N)
    base = pinv[:, :n + N] @ e2                      # (T, N)
    gain_map = pinv[:, n + N:]                       # (T, m)

    steps = int(round((k2_hi - k2_lo) / k2_step))
    axis = k2_lo + k2_step * np.arange(steps + 1)
    combos = np.array(list(itertools.product(axis, repeat=m * N)))
    scores = np.empty(len(combos))
    bounds = np.empty((len(combos), F.shape[0]))
    for idx, flat in enumerate(combos):
        k2 = flat.reshape(m, N)
        g2 = base + gain_map @ k2
        coeffs = f_next @ g2                         # (s, N)
        row_max = np.max(coeffs @ rem.T, axis=1)     # (s,)
        bounds[idx] = row_max
        scores[idx] = row_max.max()
    chosen = int(np.argmin(scores))
    k2 = combos[chosen].reshape(m, N)
    return BaselineSearch(
        k2=k2, g2=base + gain_map @ k2, row_bounds=bounds[chosen],
        candidates=combos, scores=scores, chosen=chosen,
        x_resolution=tuple(int(r) for r in np.atleast_1d(x_resolution)))


def _baseline_lp(data: ExperimentData, safe_set: PolyhedralSet, contraction: float,
                 search: BaselineSearch, objective: str = "margin"):
    F = safe_set.normals
    g = safe_set.offsets
    s, n = F.shape
    N, T = data.n_terms, data.n_samples
    f_next = F @ data.next_states
    lp = lpcore.LinearProgram()
    lp.add_block("mult", (s, s), nonneg=True)
    lp.add_block("g1", (T, n))
    with_margin = objective == "margin"
    if with_margin:
        lp.add_block("slack", (), nonneg=True)
        lp.add_constraint({"slack": 1.0}, "<=", contraction * float(np.min(g)))
    for i in range(s):
        ps_coeff = np.zeros((s, s))
        ps_coeff[i, :] = g
        terms = {"mult": ps_coeff}
        if with_margin:
            terms["slack"] = 1.0
        lp.add_constraint(terms, "<=", contraction * g[i] - search.row_bounds[i])
    for i in range(s):
        for k in range(n):
            ps_coeff = np.zeros((s, s))
            ps_coeff[i, :] = F[:, k]
            g1_coeff = np.zeros((T, n))
            g1_coeff[:, k] = -f_next[i]
            lp.add_constraint({"mult": ps_coeff, "g1": g1_coeff}, "=", 0.0)
    e1 = np.zeros((n + N, n))
    e1[:n, :] = np.eye(n)
    for r in range(n + N):
        for c in range(n):
            coeff = np.zeros((T, n))
            coeff[:, c] = data.regressor[r]
            lp.add_constraint({"g1": coeff}, "=", e1[r, c])
    if with_margin:
        lp.set_objective("max", {"slack": 1.0})
    return lp.solve()


def synthesize_min_remainder(data: ExperimentData, safe_set: PolyhedralSet, contraction: float,
                             k2_lo: float = -2.0, k2_hi: float = 2.0, k2_step: float = 0.1,
                             x_resolution=(101, 101), objective: str = "margin",
                             search: BaselineSearch | None = None) -> BaselineResult:
    """Remainder-minimization baseline: direct gain search plus the row-multiplier LP.

    Supply a precomputed ``search`` to amortize the (contraction-independent)
    direct search across several contraction levels.
    """
    if not 0.0 < contraction <= 1.0:
        raise ValueError(f"contraction must be in (0, 1], got {contraction}")
    if search is None:
        search = baseline_search(data, safe_set, k2_lo, k2_hi, k2_step, x_resolution)
    outcome = _baseline_lp(data, safe_set, contraction, search, objective)
    if outcome.status == lpcore.LpStatus.INFEASIBLE:
        raise SynthesisInfeasibleError(
            f"baseline infeasible at contraction {contraction} "
            f"(phase-1 infeasibility {outcome.infeasibility:.3e})", outcome)
    g1 = outcome["g1"]
    controller = Controller(k1=data.inputs @ g1, k2=search.k2, g1=g1, g2=search.g2)
    mult = outcome["mult"]
    F = safe_set.normals
    g = safe_set.offsets
    eye_block = np.zeros((data.state_dim + data.n_terms, data.state_dim))
    eye_block[:data.state_dim] = np.eye(data.state_dim)
    residuals = {
        "contraction": float(np.max(np.maximum(
            mult @ g + search.row_bounds - contraction * g, 0.0))),
        "multiplier_match": float(np.max(np.abs(mult @ F - F @ data.next_states @ g1))),
        "right_inverse_g1": float(np.max(np.abs(data.regressor @ g1 - eye_block))),
        "multiplier_sign": float(max(0.0, -np.min(mult))),
    }
    return BaselineResult(
        controller=controller, row_bounds=search.row_bounds, set_multiplier=mult,
        search=search, contraction=contraction,
        margin=float(outcome.objective) if outcome.objective is not None else None,
        residuals=residuals)


# ---------------------------------------------------------------------------
# lumped-disturbance evaluator (reporting only; not a synthesis path)


def lumped_disturbance_bounds(data: ExperimentData, safe_set: PolyhedralSet,
                              controller: Controller, w_bound: float,
                              lipschitz: float | None = None,
                              state_bound: float | None = None,
                              row_norm: str = "one",
                              x_resolution=(101, 101)) -> np.ndarray:
    """Per-row upper bound on the worst-case lumped disturbance for a fixed controller.

    Combines the grid maximum of the closed-loop remainder term with the
    norm bound on noise leakage through the data matrices and the direct
    disturbance term.  Used for conservatism reports only; minimizing this
    quantity over controllers is the intractable path the toolkit avoids.
    """
    box = interval_enclosure(safe_set)
    if lipschitz is None:
        lipschitz = data.dictionary.lipschitz_bound(box)
    if state_bound is None:
        state_bound = box.max_abs
    points = sample_grid(safe_set, x_resolution)
    points = np.vstack([points, np.array(enumerate_vertices(safe_set))])
    rem = data.dictionary.remainder(points)
    coeffs = safe_set.normals @ data.next_states @ controller.g2
    base = np.max(coeffs @ rem.T, axis=1)
    rn = row_norms(safe_set.normals, row_norm)
    leakage = data.n_samples * w_bound * rn * (
        _norm_inf(controller.g1) * state_bound
        + _norm_inf(controller.g2) * lipschitz * state_bound)
    return base + leakage + w_bound * rn


def format_certificate(controller: Controller, cert: SynthesisCertificate) -> str:
    """Human-readable certificate dump: configuration, matrices, residuals, margins."""

    def mat(name, arr):
        body = np.array2string(np.asarray(arr), precision=12, suppress_small=False,
                               max_line_width=120)
        return f"{name} =\n{body}"

    lines = [
        f"method: {cert.method}",
        f"contraction level: {cert.contraction:.17g}",
        f"noise margin: {cert.noise_margin:.17g}",
        f"uniform slack: {'n/a' if cert.margin is None else format(cert.margin, '.17g')}",
        "config: " + ", ".join(f"{k}={v}" for k, v in sorted(cert.config.items())),
        "",
        mat("k1", controller.k1),
        mat("k2", controller.k2),
        mat("set_multiplier", cert.set_multiplier),
        mat("slope_term", cert.slope_term),
        mat("expansion point", cert.expansion.point),
        mat("expansion anchor", cert.expansion.anchor),
        "",
        "residuals:",
    ]
    lines += [f"  {k}: {v:.6e}" for k, v in sorted(cert.residuals.items())]
    lines.append("definiteness margins (smallest eigenvalue per row):")
    for i, (margin, enf, zero) in enumerate(
            zip(cert.definiteness_margins, cert.enforced_rows, cert.zeroed_rows)):
        tag = "enforced" if enf else ("zeroed" if zero else "unconstrained")
        lines.append(f"  row {i}: {margin: .6e}  [{tag}]")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# minimal feasible contraction level


def minimal_contraction(data: ExperimentData, safe_set: PolyhedralSet, method: str = "thm2",
                        tol: float = 1e-3, **kwargs) -> float:
    """Smallest feasible contraction level in (0, 1], bracketed to ``tol`` by bisection.

    Feasibility is assumed monotone in the level (larger is easier).  The
    expansion point ('thm2'/'cor2') or the direct search ('thm1') is resolved
    once at level 1 and reused for every probe, so the sweep is deterministic
    and cheap.  Raises :class:`NoFeasibleContractionError` when even level 1
    is infeasible.
    """
    if tol < 1e-3:
        raise ValueError("bisection tolerance below 1e-3 is not supported")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")

    if method == "thm1":
        search = baseline_search(
            data, safe_set,
            k2_lo=kwargs.get("k2_lo", -2.0), k2_hi=kwargs.get("k2_hi", 2.0),
            k2_step=kwargs.get("k2_step", 0.1),
            x_resolution=kwargs.get("x_resolution", (101, 101)))

        def probe(lam: float) -> bool:
            try:
                synthesize_min_remainder(data, safe_set, lam, search=search,
                                         objective="feasible")
                return True
            except SynthesisInfeasibleError:
                return False
    else:
        expansion = kwargs.get("expansion", "auto")
        dd_margin = kwargs.get("dd_margin", 1e-6)
        definiteness = kwargs.get("definiteness", "active-rows")
        seed = kwargs.get("seed", 0)
        robust = None
        if method == "cor2":
            box = interval_enclosure(safe_set)
            robust = {
                "w_bound": float(kwargs.get("w_bound", 0.0)),
                "lipschitz": float(kwargs.get("lipschitz") if kwargs.get("lipschitz") is not None
                                   else data.dictionary.lipschitz_bound(box)),
                "state_bound": float(kwargs.get("state_bound") if kwargs.get("state_bound") is not None
                                     else box.max_abs),
                "row_norm": kwargs.get("row_norm", "one"),
            }
        _check_regressor(data)
        if isinstance(expansion, str) and expansion == "auto":
            exp = pick_expansion_point(data, safe_set, 1.0, dd_margin=dd_margin,
                                       definiteness=definiteness, robust=robust, seed=seed)
        elif isinstance(expansion, ExpansionPoint):
            exp = expansion
        else:
            exp = expansion_point(data.dictionary, np.asarray(expansion, float), safe_set)

        def probe(lam: float) -> bool:
            outcome, _, _ = _build_and_solve(data, safe_set, lam, exp, dd_margin,
                                             "feasible", definiteness, robust)
            return outcome.status != lpcore.LpStatus.INFEASIBLE

    try:
        top = probe(1.0)
    except ExpansionPointSearchFailedError as err:
        raise NoFeasibleContractionError(f"level 1 is infeasible for {method}: {err}") from err
    if not top:
        raise NoFeasibleContractionError(f"level 1 is infeasible for method {method!r}")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if probe(mid):
            hi = mid
        else:
            lo = mid
    return hi
