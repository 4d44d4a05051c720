"""Independent brute-force oracles used to freeze expected test values.

These deliberately avoid the library's fast paths: feedback by double loops
over the payoff function, projections by lattice search or long-run
first-order iterations, sequence counts by a recursive tree walk, and the
recurrence by direct rational iteration.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import product

import numpy as np

from ftrl_bargain.games import ActionGrid, TwoRoundGame, utility_ultimatum


def feedback_bruteforce(agent: str, opponent: np.ndarray, grid: ActionGrid) -> np.ndarray:
    """Expected utility per own action via the payoff function directly."""
    acts = grid.actions
    out = np.zeros(grid.size)
    for i, own in enumerate(acts):
        total = 0.0
        for j, opp in enumerate(acts):
            if agent == "firm":
                u = utility_ultimatum(own, opp)[0]
            else:
                u = utility_ultimatum(opp, own)[1]
            total += opponent[j] * u
        out[i] = total
    return out


def simplex_lattice_best(v: np.ndarray, denom: int) -> tuple[np.ndarray, float]:
    """Best simplex point with coordinates k/denom by exhaustive search."""
    v = np.asarray(v, dtype=float)
    n = v.size
    best = None
    best_d = np.inf

    def rec(prefix, remaining):
        nonlocal best, best_d
        if len(prefix) == n - 1:
            point = prefix + [remaining]
            x = np.array(point) / denom
            d = float(((x - v) ** 2).sum())
            if d < best_d:
                best_d = d
                best = x
            return
        for k in range(remaining + 1):
            rec(prefix + [k], remaining - k)

    rec([], denom)
    return best, best_d


def dual_ascent_projection(v: np.ndarray, E: np.ndarray, e: np.ndarray,
                           iters: int = 1_000_000) -> np.ndarray:
    """First-order oracle for min ||x-v||^2 s.t. Ex=e, x>=0.

    Gradient ascent on the dual of the equality constraints; x(lam) is the
    closed-form non-negative minimizer of the Lagrangian.
    """
    step = 1.0 / np.linalg.norm(E, 2) ** 2
    lam = np.zeros(E.shape[0])
    for _ in range(iters):
        x = np.maximum(v - E.T @ lam, 0.0)
        lam += step * (E @ x - e)
    return np.maximum(v - E.T @ lam, 0.0)


def count_sequences_tree_walk(D: int) -> tuple[int, int]:
    """(firm, worker) terminal-sequence counts incl. the empty sequence."""
    offers = range(D + 1)
    firm = {()}
    worker = {()}
    for a in offers:
        firm.add((a,))
        worker.add(("A", a))
        for b in offers:
            worker.add(("R", a, b))
            firm.add((a, "A", b))
            firm.add((a, "R", b))
    return len(firm), len(worker)


def iterate_mass_recurrence(A: Fraction, B: Fraction, C: Fraction,
                            w0: Fraction, f0: Fraction, n: int):
    """Direct rational iteration of the coupled recurrence."""
    w, f = Fraction(w0), Fraction(f0)
    out = [(w, f)]
    for _ in range(n):
        w, f = w - A * (1 - f), f + B * w - C
        out.append((w, f))
    return out


def iterate_to_event(A: float, B: float, C: float, w0: float, f0: float,
                     cap: int = 1_000_000) -> str:
    """Run the recurrence until the top-mass proxy crosses a boundary.

    Strictly crossing below C/B means the mass threshold broke ("decreases");
    strictly exceeding 1 means the firm mass capped ("exact"); surviving the
    cap means asymptotic approach.
    """
    ratio = C / B
    w, f = float(w0), float(f0)
    for _ in range(cap):
        w, f = w - A * (1.0 - f), f + B * w - C
        if w < ratio:
            return "decreases"
        if f > 1.0:
            return "exact"
    return "asymptotic"


def best_response_bruteforce(agent: str, opponent: np.ndarray, grid: ActionGrid):
    """Best action and value via exhaustive evaluation of the payoff table."""
    fb = feedback_bruteforce(agent, opponent, grid)
    best = int(np.argmax(fb))
    return float(grid.actions[best]), float(fb[best])


def g2_best_response_value(agent: str, opp_plan: np.ndarray, game: TwoRoundGame) -> float:
    """Value of the best pure plan by explicit enumeration of vertex plans."""
    from ftrl_bargain import games

    grid = game.grid
    n = grid.size
    best = -np.inf
    if agent == "firm":
        for off, thr in product(range(n), repeat=2):
            plan = games.firm_vertex_plan(game, grid.actions[off], grid.actions[thr])
            fb = games.two_round_feedback("firm", opp_plan, game)
            best = max(best, float(plan @ fb))
    else:
        fb = games.two_round_feedback("worker", opp_plan, game)
        # worker vertices: per-offer accept or counter choice, enumerated per infoset
        total = 0.0
        for a in range(n):
            options = [fb[games.worker_accept_index(grid, a)]]
            options += [fb[games.worker_counter_index(grid, a, b)] for b in range(n)]
            total += max(options)
        best = total
    return float(best)
