"""Dictionary-based plant models and their analytic derivatives.

The nonlinear part of a plant is spanned by a known dictionary of basis
terms, each of which vanishes at the origin: monomials of total degree
at least one, ``sin(x_k)``, and ``cos(x_k) - 1``.  Restricting to these
three kinds gives exact Jacobians and Hessians (needed by the synthesis
expansion point) and sound interval Lipschitz bounds.

The "remainder" of a dictionary is its value minus its linearization at
the origin; it is the quantity the controller acts on, and it vanishes
at zero together with its slope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    DisturbanceOutOfBoundsError,
    OutsideSafeSetError,
    ZeroExpansionPointError,
)
from .polytope import Box, PolyhedralSet

# ---------------------------------------------------------------------------
# dictionary terms


@dataclass(frozen=True)
class Monomial:
    """``prod_k x_k ** exponents[k]`` with total degree >= 1."""

    exponents: tuple[int, ...]

    def __post_init__(self):
        exps = tuple(int(e) for e in self.exponents)
        if any(e < 0 for e in exps):
            raise ValueError("monomial exponents must be non-negative")
        if sum(exps) < 1:
            raise ValueError("monomial must have total degree >= 1 (must vanish at 0)")
        object.__setattr__(self, "exponents", exps)


@dataclass(frozen=True)
class SinTerm:
    """``sin(x_k)``."""

    coord: int


@dataclass(frozen=True)
class CosM1Term:
    """``cos(x_k) - 1`` (shifted so the term vanishes at the origin)."""

    coord: int


Term = Monomial | SinTerm | CosM1Term


def term_to_json(term: Term) -> dict:
    if isinstance(term, Monomial):
        return {"kind": "monomial", "exponents": list(term.exponents)}
    if isinstance(term, SinTerm):
        return {"kind": "sin", "coord": term.coord}
    if isinstance(term, CosM1Term):
        return {"kind": "cosm1", "coord": term.coord}
    raise TypeError(f"unknown term type {type(term)!r}")


def term_from_json(obj: dict) -> Term:
    kind = obj.get("kind")
    if kind == "monomial":
        return Monomial(tuple(obj["exponents"]))
    if kind == "sin":
        return SinTerm(int(obj["coord"]))
    if kind == "cosm1":
        return CosM1Term(int(obj["coord"]))
    raise ValueError(f"unknown term kind {kind!r}")


# ---------------------------------------------------------------------------
# interval helpers for the Lipschitz bound


def _interval_mul(a: tuple[float, float], b: tuple[float, float]) -> tuple[float, float]:
    products = (a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    return min(products), max(products)


def _interval_pow(lo: float, hi: float, k: int) -> tuple[float, float]:
    if k == 0:
        return 1.0, 1.0
    if k % 2 == 1 or lo >= 0.0:
        return lo ** k, hi ** k
    if hi <= 0.0:
        return hi ** k, lo ** k
    return 0.0, max(abs(lo), abs(hi)) ** k


def _interval_cos(lo: float, hi: float) -> tuple[float, float]:
    if hi - lo >= 2.0 * math.pi:
        return -1.0, 1.0
    vals = [math.cos(lo), math.cos(hi)]
    # critical points of cos: k*pi
    k = math.ceil(lo / math.pi)
    while k * math.pi <= hi:
        vals.append(1.0 if k % 2 == 0 else -1.0)
        k += 1
    return min(vals), max(vals)


def _interval_sin(lo: float, hi: float) -> tuple[float, float]:
    clo, chi = _interval_cos(lo - math.pi / 2.0, hi - math.pi / 2.0)
    return clo, chi


# ---------------------------------------------------------------------------
# dictionary


class Dictionary:
    """An ordered list of basis terms over an n-dimensional state."""

    def __init__(self, terms, dim: int):
        terms = list(terms)
        if not terms:
            raise ValueError("dictionary needs at least one term")
        dim = int(dim)
        for t in terms:
            if isinstance(t, Monomial) and len(t.exponents) != dim:
                raise DimensionMismatchError(
                    f"monomial exponent vector has length {len(t.exponents)}, state dim is {dim}"
                )
            if isinstance(t, (SinTerm, CosM1Term)) and not 0 <= t.coord < dim:
                raise DimensionMismatchError(
                    f"term coordinate {t.coord} out of range for state dim {dim}"
                )
        self.terms = terms
        self.dim = dim
        self._lin = None

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def _check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionMismatchError(
                f"point has dim {x.shape[-1]}, dictionary expects {self.dim}"
            )
        return x

    def values(self, x) -> np.ndarray:
        """Term values at ``x``; batched when ``x`` has shape (k, n)."""
        x = self._check_point(x)
        cols = []
        for t in self.terms:
            if isinstance(t, Monomial):
                exps = np.asarray(t.exponents, dtype=float)
                cols.append(np.prod(x ** exps, axis=-1))
            elif isinstance(t, SinTerm):
                cols.append(np.sin(x[..., t.coord]))
            else:
                cols.append(np.cos(x[..., t.coord]) - 1.0)
        return np.stack(cols, axis=-1)

    def jacobian(self, x) -> np.ndarray:
        """(N, n) Jacobian of the term vector at a single point."""
        x = self._check_point(x)
        if x.ndim != 1:
            raise DimensionMismatchError("jacobian expects a single point")
        jac = np.zeros((self.n_terms, self.dim))
        for j, t in enumerate(self.terms):
            if isinstance(t, Monomial):
                for k, ek in enumerate(t.exponents):
                    if ek == 0:
                        continue
                    prod = ek * x[k] ** (ek - 1)
                    for l, el in enumerate(t.exponents):
                        if l != k:
                            prod *= x[l] ** el
                    jac[j, k] = prod
            elif isinstance(t, SinTerm):
                jac[j, t.coord] = math.cos(x[t.coord])
            else:
                jac[j, t.coord] = -math.sin(x[t.coord])
        return jac

    def hessians(self, x) -> np.ndarray:
        """(N, n, n) stack of per-term Hessians at a single point."""
        x = self._check_point(x)
        if x.ndim != 1:
            raise DimensionMismatchError("hessians expects a single point")
        hess = np.zeros((self.n_terms, self.dim, self.dim))
        for j, t in enumerate(self.terms):
            if isinstance(t, Monomial):
                exps = t.exponents
                for k in range(self.dim):
                    for l in range(k, self.dim):
                        value = 1.0
                        ok = True
                        for i, ei in enumerate(exps):
                            order = (i == k) + (i == l)
                            if ei < order:
                                ok = False
                                break
                            coeff = ei if order == 1 else (ei * (ei - 1) if order == 2 else 1)
                            value *= coeff * x[i] ** (ei - order)
                        if ok:
                            hess[j, k, l] = value
                            hess[j, l, k] = value
            elif isinstance(t, SinTerm):
                hess[j, t.coord, t.coord] = -math.sin(x[t.coord])
            else:
                hess[j, t.coord, t.coord] = -math.cos(x[t.coord])
        return hess

    def linearization(self) -> np.ndarray:
        """(N, n) slope of the term vector at the origin (cached)."""
        if self._lin is None:
            self._lin = self.jacobian(np.zeros(self.dim))
        return self._lin

    def remainder(self, x) -> np.ndarray:
        """Term values minus their linearization; vanishes at the origin."""
        x = self._check_point(x)
        return self.values(x) - x @ self.linearization().T

    def remainder_jacobian(self, x) -> np.ndarray:
        return self.jacobian(x) - self.linearization()

    def lipschitz_bound(self, box: Box) -> float:
        """Sound bound on the remainder's Lipschitz constant over ``box``.

        Bounds each entry of the remainder Jacobian by interval arithmetic
        and takes the largest row sum (the induced infinity norm), so
        ``|remainder(x) - remainder(y)|_inf <= L |x - y|_inf`` on the box.
        """
        if box.dim != self.dim:
            raise DimensionMismatchError("box dimension does not match dictionary")
        lin = self.linearization()
        worst = 0.0
        for j, t in enumerate(self.terms):
            row = 0.0
            for k in range(self.dim):
                lo_k, hi_k = float(box.lo[k]), float(box.hi[k])
                if isinstance(t, Monomial):
                    ek = t.exponents[k]
                    if ek == 0:
                        iv = (0.0, 0.0)
                    else:
                        iv = (float(ek), float(ek))
                        iv = _interval_mul(iv, _interval_pow(lo_k, hi_k, ek - 1))
                        for l, el in enumerate(t.exponents):
                            if l != k and el > 0:
                                iv = _interval_mul(
                                    iv, _interval_pow(float(box.lo[l]), float(box.hi[l]), el))
                elif isinstance(t, SinTerm):
                    iv = _interval_cos(lo_k, hi_k) if k == t.coord else (0.0, 0.0)
                else:
                    if k == t.coord:
                        slo, shi = _interval_sin(lo_k, hi_k)
                        iv = (-shi, -slo)
                    else:
                        iv = (0.0, 0.0)
                shift = lin[j, k]
                row += max(abs(iv[0] - shift), abs(iv[1] - shift))
            worst = max(worst, row)
        return worst

    def to_json(self) -> list[dict]:
        return [term_to_json(t) for t in self.terms]

    @classmethod
    def from_json(cls, obj: list, dim: int) -> "Dictionary":
        return cls([term_from_json(t) for t in obj], dim)


# ---------------------------------------------------------------------------
# expansion point


@dataclass(frozen=True)
class ExpansionPoint:
    """Remainder derivatives at a nonzero interior point, plus the shifted anchor.

    ``slope`` is the remainder Jacobian at ``point``; ``curvatures`` stacks
    the per-term Hessians (the remainder and the raw terms share Hessians
    because they differ by a linear map).  ``anchor`` is
    ``point + pinv(slope) @ remainder(point)``, the constant that enters the
    certificate's contraction rows.
    """

    point: np.ndarray
    slope: np.ndarray
    curvatures: np.ndarray
    anchor: np.ndarray

    def __post_init__(self):
        sym_err = float(np.max(np.abs(self.curvatures - np.transpose(self.curvatures, (0, 2, 1)))))
        if sym_err > 1e-12:
            raise ValueError(f"curvature matrices must be symmetric, asymmetry {sym_err:.2e}")


def expansion_point(dictionary: Dictionary, point, safe_set: PolyhedralSet) -> ExpansionPoint:
    """Build the expansion data at ``point``, which must be nonzero and in the set.

    The pseudo-inverse in the anchor uses singular-value thresholding at
    1e-10 times the largest singular value, since the defining expression
    is silent on rank deficiency.
    """
    point = np.asarray(point, dtype=float).reshape(-1)
    if np.all(point == 0.0):
        raise ZeroExpansionPointError("expansion point must be nonzero")
    if not safe_set.contains(point):
        raise OutsideSafeSetError(f"expansion point {point} lies outside the safe set")
    slope = dictionary.remainder_jacobian(point)
    curvatures = dictionary.hessians(point)
    anchor = point + np.linalg.pinv(slope, rcond=1e-10) @ dictionary.remainder(point)
    return ExpansionPoint(point=point, slope=slope, curvatures=curvatures, anchor=anchor)


# ---------------------------------------------------------------------------
# plant


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray   # (horizon + 1, n)
    inputs: np.ndarray   # (horizon, m)


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Ground-truth dynamics ``x+ = a1 x + a2 * terms(x) + b u + w``.

    Immutable after construction; hidden from synthesis, which sees only
    collected data and the dictionary.
    """

    a1: np.ndarray
    a2: np.ndarray
    b: np.ndarray
    dictionary: Dictionary
    w_bound: float = 0.0

    def __post_init__(self):
        a1 = np.atleast_2d(np.asarray(self.a1, dtype=float))
        a2 = np.atleast_2d(np.asarray(self.a2, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        n = a1.shape[0]
        if a1.shape != (n, n):
            raise DimensionMismatchError(f"a1 must be square, got {a1.shape}")
        if a2.shape != (n, self.dictionary.n_terms):
            raise DimensionMismatchError(
                f"a2 has shape {a2.shape}, expected ({n}, {self.dictionary.n_terms})"
            )
        if b.shape[0] != n:
            raise DimensionMismatchError(f"b has {b.shape[0]} rows, expected {n}")
        if self.dictionary.dim != n:
            raise DimensionMismatchError("dictionary dimension does not match a1")
        if self.w_bound < 0.0:
            raise ValueError("disturbance bound must be non-negative")
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)
        object.__setattr__(self, "b", b)

    @property
    def state_dim(self) -> int:
        return self.a1.shape[0]

    @property
    def input_dim(self) -> int:
        return self.b.shape[1]

    def linear_base(self) -> np.ndarray:
        """Linearized open-loop state matrix: a1 plus a2 times the dictionary slope."""
        return self.a1 + self.a2 @ self.dictionary.linearization()

    def _check_w(self, w) -> np.ndarray:
        if w is None:
            return np.zeros(self.state_dim)
        w = np.asarray(w, dtype=float).reshape(-1)
        if w.size != self.state_dim:
            raise DimensionMismatchError("disturbance has wrong dimension")
        if np.max(np.abs(w)) > self.w_bound + 1e-12:
            raise DisturbanceOutOfBoundsError(
                f"|w|_inf = {np.max(np.abs(w)):.6g} exceeds bound {self.w_bound:.6g}"
            )
        return w

    def step(self, x, u, w=None) -> np.ndarray:
        """One exact step of the true dynamics."""
        x = np.asarray(x, dtype=float).reshape(-1)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        w = self._check_w(w)
        return self.a1 @ x + self.a2 @ self.dictionary.values(x) + self.b @ u + w

    def simulate(self, controller, x0, horizon: int, disturbances=None) -> Trajectory:
        """Closed-loop rollout with ``u = k1 x + k2 remainder(x)``.

        ``controller`` is anything with ``k1`` (m, n) and ``k2`` (m, N)
        attributes.  ``disturbances`` is an optional (horizon, n) array; each
        row must respect the plant's bound.  Pre-generated streams make runs
        reproducible regardless of evaluation order.
        """
        x = np.asarray(x0, dtype=float).reshape(-1)
        k1 = np.atleast_2d(np.asarray(controller.k1, dtype=float))
        k2 = np.atleast_2d(np.asarray(controller.k2, dtype=float))
        states = np.empty((horizon + 1, self.state_dim))
        inputs = np.empty((horizon, k1.shape[0]))
        states[0] = x
        for t in range(horizon):
            u = k1 @ x + k2 @ self.dictionary.remainder(x)
            w = None if disturbances is None else disturbances[t]
            x = self.step(x, u, w)
            states[t + 1] = x
            inputs[t] = u
        return Trajectory(states=states, inputs=inputs)
