"""Euclidean projections onto the probability simplex and sequence-form polytopes.

The simplex path uses the exact sort-and-threshold rule (float and rational
flavors); the treeplex path is a small dense primal active-set solver whose
per-working-set subproblem is an equality-constrained least-squares solve.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "StructuralError",
    "SolverFailure",
    "Treeplex",
    "BehavioralCell",
    "SimplexCertificate",
    "project_simplex",
    "project_simplex_exact",
    "project_treeplex",
    "TreeplexProjector",
    "behavioral_from_plan",
    "validate_plan",
    "check_simplex",
]

# Tolerances shared across the package.
PLAN_FLOW_TOL = 1e-9        # realization-constraint residual accepted on plans
PLAN_NEG_TOL = 1e-12        # negative dust clamped after the active-set solve
UNREACHABLE_TOL = 1e-12     # parent mass below this marks an infoset unreachable


class StructuralError(ValueError):
    """Shape or indexing mismatch between a vector and its polytope/grid."""


class SolverFailure(RuntimeError):
    """Active-set iteration cap exceeded; carries the last KKT residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class Treeplex:
    """Sequence-form polytope: a forest of infosets hanging off sequences.

    ``infosets[i] = (parent_sequence, children)`` encodes the flow constraint
    sum(children) == parent.  The root sequence is pinned to 1.
    """

    n_sequences: int
    root: int
    infosets: tuple[tuple[int, tuple[int, ...]], ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        seen: dict[int, int] = {}
        for iset, (parent, children) in enumerate(self.infosets):
            if not (0 <= parent < self.n_sequences):
                raise StructuralError(f"infoset {iset}: parent {parent} out of range")
            if not children:
                raise StructuralError(f"infoset {iset} has no extensions")
            for c in children:
                if not (0 <= c < self.n_sequences) or c == self.root:
                    raise StructuralError(f"infoset {iset}: bad child {c}")
                if c in seen:
                    raise StructuralError(f"sequence {c} extends two infosets")
                seen[c] = iset
        missing = set(range(self.n_sequences)) - {self.root} - set(seen)
        if missing:
            raise StructuralError(f"sequences outside any infoset: {sorted(missing)}")
        # Parents must be assigned before their children (forest rooted at root).
        depth = {self.root: 0}
        for parent, children in self.infosets:
            if parent not in depth:
                raise StructuralError("infosets are not topologically ordered")
            for c in children:
                depth[c] = depth[parent] + 1

    @property
    def n_constraints(self) -> int:
        return 1 + len(self.infosets)

    def constraints(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense (E, e) with E @ r == e for every valid realization plan."""
        m = self.n_constraints
        E = np.zeros((m, self.n_sequences))
        e = np.zeros(m)
        E[0, self.root] = 1.0
        e[0] = 1.0
        for i, (parent, children) in enumerate(self.infosets):
            E[1 + i, list(children)] = 1.0
            E[1 + i, parent] -= 1.0
        return E, e

    def uniform_plan(self) -> np.ndarray:
        """Feasible plan splitting every infoset uniformly."""
        r = np.zeros(self.n_sequences)
        r[self.root] = 1.0
        for parent, children in self.infosets:
            r[list(children)] = r[parent] / len(children)
        return r

    def normalize_backward(self, u: np.ndarray) -> np.ndarray:
        """Shift ``u`` by a row-space translation so every infoset tops out at 0.

        Walks infosets deepest-first, moving each infoset's best-child value
        onto its parent sequence (a backward-induction pass).  Projections are
        invariant under such translations, but the shifted vector keeps the
        numerically active entries at unit scale however large the raw
        cumulative utilities grow.
        """
        out = np.array(u, dtype=float)
        for parent, children in reversed(self.infosets):
            ch = list(children)
            top = float(out[ch].max())
            out[ch] -= top
            out[parent] += top
        out[self.root] = 0.0
        return out


@dataclass(frozen=True)
class SimplexCertificate:
    """KKT certificate for a simplex projection: threshold and active support."""

    theta: float
    support: np.ndarray


@dataclass(frozen=True)
class BehavioralCell:
    """Local distribution recovered at one infoset, with a reachability flag."""

    probs: np.ndarray
    unreachable: bool


def check_simplex(x: np.ndarray, tol: float = 1e-12) -> bool:
    x = np.asarray(x, dtype=float)
    return bool(np.all(x >= -tol) and abs(float(x.sum()) - 1.0) <= max(tol, 1e-12))


def project_simplex(v, return_certificate: bool = False):
    """Nearest point of ``v`` on the probability simplex (sort-and-threshold).

    Ties between equal entries are broken by a stable sort on the index, so
    runs are bit-reproducible.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise StructuralError("projection input must be a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("projection input must be finite (no NaN/inf)")
    u = v[np.argsort(-v, kind="stable")]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, u.size + 1)
    rho = int(np.nonzero(u * idx > css)[0][-1])
    theta = css[rho] / (rho + 1.0)
    x = np.maximum(v - theta, 0.0)
    if return_certificate:
        return x, SimplexCertificate(theta=float(theta), support=x > 0.0)
    return x


def project_simplex_batch(v: np.ndarray) -> np.ndarray:
    """Row-wise simplex projection; same rule as :func:`project_simplex`."""
    v = np.asarray(v, dtype=float)
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    idx = np.arange(1, v.shape[1] + 1)
    cond = u * idx > css
    rho = v.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(v.shape[0]), rho] / (rho + 1.0)
    return np.maximum(v - theta[:, None], 0.0)


def project_simplex_exact(v: Sequence[Fraction]) -> list[Fraction]:
    """Exact-rational twin of :func:`project_simplex`."""
    vals = [Fraction(x) for x in v]
    if not vals:
        raise StructuralError("projection input must be a non-empty vector")
    order = sorted(range(len(vals)), key=lambda i: (-vals[i], i))
    total = Fraction(0)
    theta = None
    for j, i in enumerate(order, start=1):
        total += vals[i]
        cand = (total - 1) / j
        if vals[i] - cand > 0:
            theta = cand
        else:
            break
    assert theta is not None
    zero = Fraction(0)
    return [x - theta if x > theta else zero for x in vals]


def behavioral_from_plan(r: np.ndarray, t: Treeplex) -> list[BehavioralCell]:
    """Per-infoset local simplices r(child)/r(parent).

    Infosets whose parent mass is at most ``UNREACHABLE_TOL`` get a uniform
    placeholder and are flagged unreachable.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (t.n_sequences,):
        raise StructuralError("plan length does not match treeplex")
    cells = []
    for parent, children in t.infosets:
        mass = float(r[parent])
        if mass <= UNREACHABLE_TOL:
            probs = np.full(len(children), 1.0 / len(children))
            cells.append(BehavioralCell(probs=probs, unreachable=True))
        else:
            probs = np.maximum(r[list(children)], 0.0) / mass
            cells.append(BehavioralCell(probs=probs, unreachable=False))
    return cells


def validate_plan(r: np.ndarray, t: Treeplex, tol: float = PLAN_FLOW_TOL) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape != (t.n_sequences,):
        raise StructuralError("plan length does not match treeplex")
    if abs(float(r[t.root]) - 1.0) > tol or float(r.min()) < -PLAN_NEG_TOL:
        return False
    E, e = t.constraints()
    return float(np.abs(E @ r - e).max()) <= tol


class TreeplexProjector:
    """Primal active-set projector onto one treeplex.

    Subproblems fix a working set of sequences at zero and solve the
    equality-constrained least-squares projection in closed form; the solve
    operator is cached per working set, which makes the per-step cost of a
    converged learning run a couple of mat-vecs.
    """

    MAX_CACHE = 512

    def __init__(self, t: Treeplex):
        self.treeplex = t
        self.E, self.e = t.constraints()
        self.n = t.n_sequences
        self.m = self.E.shape[0]
        self._start = t.uniform_plan()
        self._cache: dict[frozenset, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def _solver(self, working: frozenset):
        hit = self._cache.get(working)
        if hit is not None:
            return hit
        free = np.array(sorted(set(range(self.n)) - working), dtype=int)
        A = self.E[:, free]
        P = np.linalg.pinv(A @ A.T, rcond=1e-12)
        if len(self._cache) >= self.MAX_CACHE:
            self._cache.clear()
        self._cache[working] = (free, A, P)
        return free, A, P

    def _subproblem(self, v: np.ndarray, working: frozenset):
        """argmin ||x - v|| s.t. Ex = e, x[working] = 0; returns (x, nu)."""
        free, A, P = self._solver(working)
        nu = P @ (self.e - A @ v[free])
        x = np.zeros(self.n)
        x[free] = v[free] + A.T @ nu
        return x, nu, free

    FEAS_TOL = 1e-9     # free entries above -FEAS_TOL count as feasible, then clamp
    MU_TOL = 1e-9       # working-set multipliers above -MU_TOL certify optimality

    def project(self, v, working: Optional[frozenset] = None, return_working: bool = False):
        """Active-set projection.

        A clip-and-grow presolve clamps every negative free entry until the
        equality-constrained solution is feasible; the exact phase then drops
        one most-negative multiplier at a time, re-clamping along blocking
        segments.  Dropping a single negative multiplier provably moves the
        dropped coordinate strictly positive, so the loop cannot cycle.
        """
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise StructuralError("projection input length does not match treeplex")
        if not np.all(np.isfinite(v)):
            raise ValueError("projection input must be finite (no NaN/inf)")

        root = self.treeplex.root
        W = frozenset() if working is None else frozenset(working) - {root}
        residual = np.inf
        max_iter = 10 * self.n

        # presolve: clamp negatives wholesale until the subproblem is feasible
        x_new = nu = free = None
        for _ in range(self.n + 1):
            x_new, nu, free = self._subproblem(v, W)
            residual = float(np.abs(self.E @ x_new - self.e).max())
            if residual > 1e-8:
                if W:  # warm set inconsistent with this input; restart cold
                    W = frozenset()
                    continue
                raise SolverFailure("treeplex subproblem inconsistent", residual)
            neg = free[x_new[free] < -self.FEAS_TOL]
            if neg.size == 0:
                break
            W = W | {int(i) for i in neg if i != root}
        else:
            raise SolverFailure("presolve failed to reach feasibility", residual)

        x_cur = np.maximum(x_new, 0.0)
        for _ in range(max_iter):
            widx = np.array(sorted(W), dtype=int)
            if widx.size == 0:
                out = x_cur
                return (out, W) if return_working else out
            mu = -v[widx] - self.E[:, widx].T @ nu
            worst = int(np.argmin(mu))
            if mu[worst] >= -self.MU_TOL:
                out = x_cur
                return (out, W) if return_working else out
            W = W - {int(widx[worst])}
            # walk toward the relaxed optimum, clamping blockers, until the
            # subproblem for the current working set is feasible
            for _ in range(self.n + 1):
                x_new, nu, free = self._subproblem(v, W)
                residual = float(np.abs(self.E @ x_new - self.e).max())
                if residual > 1e-8:
                    raise SolverFailure("treeplex subproblem inconsistent", residual)
                if free.size == 0 or float(x_new[free].min()) >= -self.FEAS_TOL:
                    x_cur = np.maximum(x_new, 0.0)
                    break
                d = x_new - x_cur
                shrink = d < -self.FEAS_TOL
                with np.errstate(divide="ignore", invalid="ignore"):
                    steps = np.where(shrink, np.maximum(x_cur, 0.0) / np.maximum(-d, 1e-300), np.inf)
                alpha = min(max(float(steps.min()), 0.0), 1.0)
                x_cur = x_cur + alpha * d
                hit = np.nonzero(steps <= alpha * (1 + 1e-12) + 1e-15)[0]
                x_cur[hit] = 0.0
                W = W | {int(i) for i in hit if i != root}
            else:
                raise SolverFailure("blocking walk failed to terminate", residual)
        raise SolverFailure("active-set iteration cap exceeded", residual)


def project_treeplex(v, t: Treeplex) -> np.ndarray:
    """One-shot treeplex projection; see :class:`TreeplexProjector`."""
    return TreeplexProjector(t).project(v)
