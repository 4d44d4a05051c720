import numpy as np
import pytest

from ftrl_bargain import games, learner
from ftrl_bargain.games import ActionGrid, TwoRoundGame, UltimatumGame
from ftrl_bargain.learner import LearnerConfig
from ftrl_bargain.metagame import minimax_solve, summarize, sweep_initials


def small_sweep(eta=0.5, **kw):
    cfg = LearnerConfig(game=UltimatumGame(ActionGrid(4)), eta=eta, **kw)
    return sweep_initials(cfg)


class TestSweep:
    def test_shape_and_convergence(self):
        sweep = small_sweep()
        assert sweep.shape == (5, 5)
        assert sweep.all_converged()
        for row in sweep.cells:
            for cell in row:
                assert 0.0 <= cell.u_w <= 1.0
                assert cell.eps <= 1e-7

    def test_batched_matches_per_cell_runs(self):
        cfg = LearnerConfig(game=UltimatumGame(ActionGrid(4)), eta=0.5)
        sweep = sweep_initials(cfg)
        for i, a_f in enumerate(sweep.firm_axis):
            for j, a_w in enumerate(sweep.worker_axis):
                traj = learner.run_dynamics(
                    cfg,
                    games.pure_strategy(cfg.grid, a_f),
                    games.pure_strategy(cfg.grid, a_w),
                )
                cell = sweep.cells[i][j]
                assert cell.converged_at == traj.converged_at
                assert np.array_equal(cell.final_f, traj.final_f)
                assert np.array_equal(cell.final_w, traj.final_w)

    def test_deterministic_rerun(self):
        a = small_sweep()
        b = small_sweep()
        for ra, rb in zip(a.cells, b.cells):
            for ca, cb in zip(ra, rb):
                assert ca.u_w == cb.u_w
                assert ca.converged_at == cb.converged_at
                assert np.array_equal(ca.final_w, cb.final_w)

    def test_constant_sum_on_accepting_cells(self):
        sweep = small_sweep()
        grid = ActionGrid(4)
        for row in sweep.cells:
            for cell in row:
                fb_f = games.ultimatum_feedback("firm", cell.final_w, grid)
                u_f = float(cell.final_f @ fb_f)
                if cell.u_w > 1e-9 or u_f > 1e-9:  # no-deal cells exempt
                    assert u_f + cell.u_w == pytest.approx(1.0, abs=1e-9)

    def test_uniform_axis(self):
        cfg = LearnerConfig(game=UltimatumGame(ActionGrid(4)), eta=0.5)
        sweep = sweep_initials(cfg, axis_f="uniform")
        assert sweep.shape == (1, 5)
        assert sweep.firm_axis == ("uniform",)
        assert sweep.all_converged()

    def test_two_round_sweep_smoke(self):
        cfg = LearnerConfig(game=TwoRoundGame(ActionGrid(3), 0.55), eta=0.5)
        sweep = sweep_initials(cfg, parallelism=1)
        assert sweep.shape == (16, 16)
        assert sweep.all_converged()
        assert all(c.threat is not None for row in sweep.cells for c in row)
        assert max(c.eps for row in sweep.cells for c in row) <= 1e-7

    def test_parallel_matches_serial(self):
        cfg = LearnerConfig(game=TwoRoundGame(ActionGrid(3), 0.9), eta=0.5)
        serial = sweep_initials(cfg, parallelism=1)
        parallel = sweep_initials(cfg, parallelism=2)
        for ra, rb in zip(serial.cells, parallel.cells):
            for ca, cb in zip(ra, rb):
                assert ca.u_w == cb.u_w and ca.converged_at == cb.converged_at


class TestMinimax:
    def test_matching_pennies_value(self):
        sol = minimax_solve(np.array([[1.0, 0.0], [0.0, 1.0]]), tol=2e-3, max_iters=2_000_000)
        assert sol.br_gap <= 2e-3
        assert sol.value_w == pytest.approx(0.5, abs=2e-3)
        np.testing.assert_allclose(sol.row_mix, [0.5, 0.5], atol=0.05)

    def test_saddle_point(self):
        m = np.array([
            [0.6, 0.5, 0.7],
            [0.4, 0.3, 0.5],
            [0.8, 0.6, 0.9],
        ])  # row 1 keeps the column player at 0.5 at most; column 1 guarantees 0.3+
        sol = minimax_solve(m, tol=1e-4)
        rowmax = m.max(axis=1).min()
        colmin = m.min(axis=0).max()
        assert rowmax == colmin == 0.5  # strict saddle at (1, 2)... sanity
        assert sol.value_w == pytest.approx(0.5, abs=1e-3)

    def test_certificate_consistency(self, rng):
        m = rng.uniform(size=(8, 6))
        sol = minimax_solve(m, tol=5e-3)
        best_col = float((sol.row_mix @ m).max())
        best_row = float((m @ sol.col_mix).min())
        assert sol.br_gap == pytest.approx(best_col - best_row, abs=1e-12)
        assert best_row - 1e-12 <= sol.value_w <= best_col + 1e-12

    def test_uniform_start_solves_symmetric_game_immediately(self):
        # matching pennies' saddle is the uniform profile the play starts at
        sol = minimax_solve(np.array([[1.0, 0.0], [0.0, 1.0]]), tol=1e-12, max_iters=2000)
        assert sol.br_gap <= 1e-12 and sol.value_w == pytest.approx(0.5, abs=1e-12)

    def test_cap_returns_actual_gap(self):
        m = np.array([[0.7, 0.2], [0.3, 0.8]])  # interior saddle, slow averages
        sol = minimax_solve(m, tol=1e-12, max_iters=2000)
        assert sol.iterations == 2000
        assert sol.br_gap > 1e-12

    def test_rejects_bad_matrix(self):
        with pytest.raises(ValueError):
            minimax_solve(np.array([[np.nan, 1.0]]))

    def test_security_dominates_worst_cell(self):
        sweep = small_sweep()
        m = sweep.payoff_matrix()
        sol = minimax_solve(m, tol=1e-3)
        assert sol.value_w >= np.nanmin(m) - 1e-3


class TestSummarize:
    def test_constant_sweep(self):
        sweep = small_sweep(eta=0.1, reference_f=0.25, reference_w=0.75)
        s = summarize(sweep, reference_w=0.75)
        # tiny learning rates pin the outcome at the smaller reference
        assert s.min_uw == pytest.approx(s.max_uw, abs=1e-9)
        assert s.prop_ge_ref in (0.0, 1.0)

    def test_proportions_definition(self):
        sweep = small_sweep()
        s = summarize(sweep)
        m = sweep.payoff_matrix()
        thr = np.array([float(a) for a in sweep.worker_axis])
        expected = float((m >= thr[None, :] - 1e-9).mean())
        assert s.prop_ge_init == pytest.approx(expected)
        assert s.prop_ge_ref is None

    def test_uniform_axis_has_no_init_column(self):
        cfg = LearnerConfig(game=UltimatumGame(ActionGrid(4)), eta=0.5)
        sweep = sweep_initials(cfg, axis_w="uniform")
        assert summarize(sweep).prop_ge_init is None
