"""Experiment orchestration: config files, subcommands, and CSV persistence.

Subcommands: ``run`` (one trajectory plus certificate), ``sweep`` (heatmap and
summary over initial strategies), ``metagame`` (minimax of a heatmap),
``audit`` (randomized invariant monitors), and ``oracle`` (closed-form vs
iterated recurrence table).  Exit codes: 0 success, 1 audit/acceptance
violation, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis, games, geometry, learner, metagame
from .games import FIRM, WORKER, ActionGrid, TwoRoundGame, UltimatumGame
from .learner import LearnerConfig, MonitorSuite

__all__ = ["ExperimentConfig", "load_config", "run_audit", "AuditReport", "main"]

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2

_CONFIG_KEYS = {
    "game", "d", "eta", "delta", "reference_f", "reference_w",
    "conv_threshold", "max_steps", "arithmetic", "sweep_firm", "sweep_worker",
    "output_dir", "parallelism", "seed",
}


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _parse_number(text: str) -> float:
    return float(Fraction(text))


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat key-value experiment description; see README for the key list."""

    game: str
    d: int
    eta: Fraction  # kept rational so exact-mode runs share the float path's rate
    delta: Optional[float] = None
    reference_f: Optional[float] = None
    reference_w: Optional[float] = None
    conv_threshold: Optional[float] = None
    max_steps: Optional[int] = None
    arithmetic: str = "float"
    sweep_firm: Optional[str] = None
    sweep_worker: Optional[str] = None
    output_dir: str = "."
    parallelism: Optional[int] = None
    seed: int = 42

    def to_learner_config(self) -> LearnerConfig:
        grid = ActionGrid(self.d)
        if self.game == "g1":
            game = UltimatumGame(grid)
        else:
            if self.delta is None:
                raise ConfigError("two-round config requires delta")
            game = TwoRoundGame(grid, self.delta)
        return LearnerConfig(
            game=game,
            eta=self.eta,
            reference_f=self.reference_f,
            reference_w=self.reference_w,
            conv_threshold=self.conv_threshold,
            max_steps=self.max_steps,
            arithmetic=self.arithmetic,
        )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    raw: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = text.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value

    def get(key, default=None):
        return raw.get(key, default)

    game = get("game")
    if game not in ("g1", "g2"):
        raise ConfigError("config requires game = g1 | g2")
    if "d" not in raw or "eta" not in raw:
        raise ConfigError("config requires d and eta")

    def ref(key):
        value = get(key)
        if value is None or value == "zero":
            return None
        return _parse_number(value)

    try:
        return ExperimentConfig(
            game=game,
            d=int(raw["d"]),
            eta=Fraction(raw["eta"]),
            delta=_parse_number(raw["delta"]) if "delta" in raw else None,
            reference_f=ref("reference_f"),
            reference_w=ref("reference_w"),
            conv_threshold=_parse_number(raw["conv_threshold"]) if "conv_threshold" in raw else None,
            max_steps=int(raw["max_steps"]) if "max_steps" in raw else None,
            arithmetic=get("arithmetic", "float"),
            sweep_firm=get("sweep_firm"),
            sweep_worker=get("sweep_worker"),
            output_dir=get("output_dir", "."),
            parallelism=int(raw["parallelism"]) if "parallelism" in raw else None,
            seed=int(get("seed", "42")),
        )
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# CSV writers / readers
# ---------------------------------------------------------------------------


def write_certificate_csv(path: Path, cert: analysis.EquilibriumCertificate,
                          converged_at: Optional[int]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "gap_f", "gap_w", "br_f", "br_w", "structural_ne", "converged_at"])
        w.writerow([
            _fmt(cert.eps), _fmt(cert.gap_f), _fmt(cert.gap_w),
            _fmt(cert.br_f), _fmt(cert.br_w), _fmt(cert.structural_ne),
            _fmt(converged_at),
        ])


def write_trajectory_csv(path: Path, history) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "agent", "action_index", "mass"])
        for step, (x_f, x_w) in enumerate(history, start=1):
            for agent, x in ((FIRM, x_f), (WORKER, x_w)):
                for idx, mass in enumerate(x):
                    w.writerow([step, agent, idx, _fmt(float(mass))])


def write_heatmap_csv(path: Path, sweep: metagame.SweepResult) -> None:
    is_g2 = isinstance(sweep.config.game, TwoRoundGame)
    header = ["firm_init", "worker_init"]
    if is_g2:
        header += ["worker_counter", "firm_threshold"]
    header += ["u_w", "eps", "converged_at", "status", "credible_threat", "noncredible_threat"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        rows, cols = sweep.shape
        for i in range(rows):
            for j in range(cols):
                cell = sweep.cells[i][j]
                fe = sweep.firm_axis[i]
                we = sweep.worker_axis[j]
                if is_g2:
                    f_offer, f_thresh = fe if fe != "uniform" else ("uniform", "")
                    w_thresh, w_counter = we if we != "uniform" else ("uniform", "")
                    lead = [_fmt(f_offer) if fe != "uniform" else "uniform",
                            _fmt(w_thresh) if we != "uniform" else "uniform",
                            _fmt(w_counter) if we != "uniform" else "",
                            _fmt(f_thresh) if fe != "uniform" else ""]
                else:
                    lead = ["uniform" if fe == "uniform" else _fmt(fe),
                            "uniform" if we == "uniform" else _fmt(we)]
                threat = cell.threat
                w.writerow(lead + [
                    _fmt(cell.u_w), _fmt(cell.eps), _fmt(cell.converged_at), cell.status,
                    _fmt(threat.credible_worker_threat) if threat else "",
                    _fmt(threat.noncredible_firm_threat) if threat else "",
                ])


def write_summary_csv(path: Path, summary: metagame.SweepSummary) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["min_uw", "max_uw", "prop_ge_init", "prop_ge_ref"])
        w.writerow([
            _fmt(summary.min_uw), _fmt(summary.max_uw),
            _fmt(summary.prop_ge_init), _fmt(summary.prop_ge_ref),
        ])


@dataclass
class HeatmapTable:
    """Parsed heatmap.csv: row/column init labels plus per-cell records."""

    firm_inits: list[str]
    worker_inits: list[str]
    u_w: np.ndarray
    status: list[list[str]]


def read_heatmap_csv(path: Path) -> HeatmapTable:
    with path.open() as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "firm_init" not in reader.fieldnames:
            raise ConfigError(f"{path}: not a heatmap file")
        is_g2 = "worker_counter" in reader.fieldnames
        records = []
        for row in reader:
            fkey = row["firm_init"] + ("|" + row["firm_threshold"] if is_g2 else "")
            wkey = row["worker_init"] + ("|" + row["worker_counter"] if is_g2 else "")
            records.append((fkey, wkey, float(row["u_w"]), row["status"]))
    firm_inits: list[str] = []
    worker_inits: list[str] = []
    for fkey, wkey, _, _ in records:
        if fkey not in firm_inits:
            firm_inits.append(fkey)
        if wkey not in worker_inits:
            worker_inits.append(wkey)
    u = np.full((len(firm_inits), len(worker_inits)), np.nan)
    status = [["missing"] * len(worker_inits) for _ in firm_inits]
    for fkey, wkey, uw, st in records:
        i, j = firm_inits.index(fkey), worker_inits.index(wkey)
        u[i, j] = uw
        status[i][j] = st
    return HeatmapTable(firm_inits, worker_inits, u, status)


def write_minimax_csv(path: Path, table: HeatmapTable, sol: metagame.MinimaxSolution) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["record", "player", "init", "value"])
        w.writerow(["value_w", "", "", _fmt(sol.value_w)])
        w.writerow(["br_gap", "", "", _fmt(sol.br_gap)])
        for label, prob in zip(table.firm_inits, sol.row_mix):
            if prob > 1e-9:
                w.writerow(["mix", "firm", label, _fmt(float(prob))])
        for label, prob in zip(table.worker_inits, sol.col_mix):
            if prob > 1e-9:
                w.writerow(["mix", "worker", label, _fmt(float(prob))])


# ---------------------------------------------------------------------------
# Invariant audit
# ---------------------------------------------------------------------------


@dataclass
class AuditReport:
    seed: int
    n_runs: int
    violations: list[tuple[str, int, int, str]] = field(default_factory=list)
    exact_compared: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def lines(self) -> list[str]:
        monitors = [
            "lemma1_worker_sorted", "lemma2_firm_unimodal", "lemma3_worker_stationary",
            "lemma4_wmax_mass_decays", "lemma5_wmax_monotone",
            "claim1_mass_difference", "claim2_order", "exact_float_agreement",
        ]
        out = [f"audit: {self.n_runs} runs, seed {self.seed}, "
               f"{self.exact_compared} exact-mode comparisons"]
        for name in monitors:
            hits = [v for v in self.violations if v[0] == name]
            if hits:
                run, step = hits[0][1], hits[0][2]
                out.append(f"{name}: {len(hits)} violations (first: run {run}, step {step})")
            else:
                out.append(f"{name}: 0 violations")
        return out


def _audit_draw(rng: np.random.Generator, d_low=3, d_high=30):
    d = int(rng.integers(d_low, d_high + 1))
    eta = Fraction(int(rng.integers(10, 1001)), 1000)
    weights_f = rng.integers(1, 100, size=d + 1)
    # The firm-unimodality law conditions on the worker's whole history being
    # sorted; an unsorted initial mixture pollutes the cumulative sum at every
    # later step, so the worker draw is random but non-increasing.
    weights_w = np.sort(rng.integers(1, 100, size=d + 1))[::-1]
    return d, eta, weights_f, weights_w


def run_audit(n_runs: int, seed: int, exact_compare: int = 20,
              max_steps: int = 8000) -> AuditReport:
    """Randomized trajectories with every structural monitor armed.

    Draws D in [3, 30], a rational learning rate in (0, 1], and random initial
    mixtures.  The first ``exact_compare`` draws with D <= 10 are re-run in
    exact rational arithmetic and must match the float path to 1e-12.
    """
    rng = np.random.default_rng(seed)
    report = AuditReport(seed=seed, n_runs=n_runs)
    for run_idx in range(n_runs):
        d, eta, wf, ww = _audit_draw(rng)
        total_f, total_w = int(wf.sum()), int(ww.sum())
        init_f = wf.astype(float) / total_f
        init_w = ww.astype(float) / total_w
        cfg = LearnerConfig(
            game=UltimatumGame(ActionGrid(d)), eta=eta, max_steps=max_steps
        )
        monitors = MonitorSuite(cfg.grid)
        traj = learner.run_dynamics(cfg, init_f, init_w, monitors=monitors)
        for monitor, step, detail in monitors.violations:
            report.violations.append((monitor, run_idx, step, detail))

        if report.exact_compared < exact_compare and d <= 10:
            cfg_exact = LearnerConfig(
                game=UltimatumGame(ActionGrid(d)), eta=eta,
                max_steps=max_steps, arithmetic="exact",
            )
            exact_init_f = [Fraction(int(v), total_f) for v in wf]
            exact_init_w = [Fraction(int(v), total_w) for v in ww]
            exact = learner.run_dynamics(cfg_exact, exact_init_f, exact_init_w)
            report.exact_compared += 1
            err = max(
                max(abs(float(a) - b) for a, b in zip(exact.final_f, traj.final_f)),
                max(abs(float(a) - b) for a, b in zip(exact.final_w, traj.final_w)),
            )
            if err > 1e-12 or exact.converged_at != traj.converged_at:
                report.violations.append(
                    ("exact_float_agreement", run_idx, traj.steps,
                     f"max deviation {err:.3e}, converged {exact.converged_at} vs {traj.converged_at}")
                )
    return report


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _parse_initial(cfg: LearnerConfig, text: str, agent: str):
    game = cfg.game
    if isinstance(game, UltimatumGame):
        if text == "uniform":
            return games.uniform_strategy(game.grid)
        return games.pure_strategy(game.grid, _parse_number(text))
    if text == "uniform":
        return games.build_treeplex(game, agent).uniform_plan()
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(
            f"two-round initial strategy must be 'first,second', got {text!r}"
        )
    a, b = (_parse_number(p) for p in parts)
    if agent == FIRM:
        return games.firm_vertex_plan(game, offer=a, threshold=b)
    return games.worker_vertex_plan(game, threshold=a, counter=b)


def cmd_run(args) -> int:
    config = load_config(args.config)
    cfg = config.to_learner_config()
    init_f = _parse_initial(cfg, args.init_f, FIRM)
    init_w = _parse_initial(cfg, args.init_w, WORKER)
    traj = learner.run_dynamics(cfg, init_f, init_w, keep_history=args.dump_trajectory)
    cert = analysis.certify_epsilon_ne((traj.final_f, traj.final_w), cfg.game)
    out_dir = Path(args.out_dir or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_certificate_csv(out_dir / "certificate.csv", cert, traj.converged_at)
    if args.dump_trajectory:
        write_trajectory_csv(out_dir / "trajectory.csv", traj.history)
    status = f"converged at step {traj.converged_at}" if traj.converged else \
        f"did not converge within {traj.steps} steps"
    print(f"run: {status}; eps = {cert.eps:.3e}; wrote {out_dir / 'certificate.csv'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    if not config.sweep_firm or not config.sweep_worker:
        raise ConfigError("sweep requires sweep_firm and sweep_worker axes")
    cfg = config.to_learner_config()
    sweep = metagame.sweep_initials(
        cfg, axis_f=config.sweep_firm, axis_w=config.sweep_worker,
        parallelism=config.parallelism,
    )
    out_dir = Path(args.out_dir or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_heatmap_csv(out_dir / "heatmap.csv", sweep)
    summary = metagame.summarize(sweep, reference_w=config.reference_w)
    write_summary_csv(out_dir / "summary.csv", summary)
    n_conv = sum(c.converged for row in sweep.cells for c in row)
    total = sweep.shape[0] * sweep.shape[1]
    print(f"sweep: {n_conv}/{total} cells converged; "
          f"u_w in [{summary.min_uw:.4f}, {summary.max_uw:.4f}]; wrote {out_dir / 'heatmap.csv'}")
    return EXIT_OK if n_conv >= 1 else EXIT_VIOLATION


def cmd_metagame(args) -> int:
    table = read_heatmap_csv(Path(args.heatmap))
    bad = [st for row in table.status for st in row if st != "converged"]
    if bad and not args.allow_partial:
        print("metagame: heatmap has non-converged cells; pass --allow-partial to drop them",
              file=sys.stderr)
        return EXIT_USAGE
    u = table.u_w
    firm_inits, worker_inits = table.firm_inits, table.worker_inits
    if bad:
        keep_rows = [i for i in range(u.shape[0])
                     if all(st == "converged" for st in table.status[i])]
        u = u[keep_rows]
        firm_inits = [firm_inits[i] for i in keep_rows]
        keep_cols = [j for j in range(u.shape[1])
                     if not np.any(np.isnan(u[:, j]))]
        u = u[:, keep_cols]
        worker_inits = [worker_inits[j] for j in keep_cols]
        if u.size == 0:
            raise ConfigError("no fully converged rows/columns remain")
        table = HeatmapTable(firm_inits, worker_inits, u,
                             [["converged"] * len(worker_inits)] * len(firm_inits))
    sol = metagame.minimax_solve(table.u_w, tol=args.tol)
    out = Path(args.out or "minimax.csv")
    write_minimax_csv(out, table, sol)
    print(f"metagame: value_w = {sol.value_w:.6f} (gap {sol.br_gap:.2e}, "
          f"{sol.iterations} iterations); wrote {out}")
    return EXIT_OK


def cmd_audit(args) -> int:
    config = load_config(args.config)
    if config.game != "g1":
        raise ConfigError("audit requires a g1 config")
    report = run_audit(args.runs, args.seed if args.seed is not None else config.seed,
                       exact_compare=args.exact_compare)
    for line in report.lines():
        print(line)
    if not report.ok:
        print(f"audit: FAILED; reproduce with seed {report.seed}", file=sys.stderr)
        return EXIT_VIOLATION
    print("audit: all monitors clean")
    return EXIT_OK


def cmd_oracle(args) -> int:
    try:
        params = analysis.recurrence_params(args.D, Fraction(args.eta), args.k,
                                            Fraction(args.w0), Fraction(args.f0))
    except ValueError as exc:
        print(f"oracle: {exc}", file=sys.stderr)
        return EXIT_USAGE
    import mpmath

    print("n,w_closed,f_closed,w_iter,f_iter,abs_diff")
    w_it, f_it = params.w0, params.f0
    max_diff = 0.0
    for n in range(args.n + 1):
        if n > 0:
            w_it, f_it = (
                w_it - params.A * (1 - f_it),
                f_it + params.B * w_it - params.C,
            )
        w_cl, f_cl = analysis.closed_form_mp(params, n, dps=60)
        with mpmath.workdps(60):
            diff = float(max(
                abs(w_cl - mpmath.mpf(w_it.numerator) / w_it.denominator),
                abs(f_cl - mpmath.mpf(f_it.numerator) / f_it.denominator),
            ))
        max_diff = max(max_diff, diff)
        print(f"{n},{float(w_cl):.17g},{float(f_cl):.17g},"
              f"{float(w_it):.17g},{float(f_it):.17g},{diff:.3e}")
    verdict = analysis.classify_recurrence(params)
    print(f"verdict: {verdict.value} (max |diff| {max_diff:.3e})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ftrl-bargain",
        description="Regularized-leader learning dynamics in discretized bargaining games",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="one trajectory plus its equilibrium certificate")
    p_run.add_argument("config")
    p_run.add_argument("--init-f", required=True,
                       help="firm initial strategy: action value, 'uniform', or 'offer,threshold'")
    p_run.add_argument("--init-w", required=True,
                       help="worker initial strategy: action value, 'uniform', or 'threshold,counter'")
    p_run.add_argument("--dump-trajectory", action="store_true")
    p_run.add_argument("--out-dir", default=None)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep initial strategies; write heatmap + summary")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--out-dir", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_meta = sub.add_parser("metagame", help="minimax of a converged heatmap")
    p_meta.add_argument("heatmap")
    p_meta.add_argument("--tol", type=float, default=1e-3)
    p_meta.add_argument("--allow-partial", action="store_true")
    p_meta.add_argument("--out", default=None)
    p_meta.set_defaults(func=cmd_metagame)

    p_audit = sub.add_parser("audit", help="randomized invariant monitors")
    p_audit.add_argument("config")
    p_audit.add_argument("--runs", type=int, default=100)
    p_audit.add_argument("--seed", type=int, default=None)
    p_audit.add_argument("--exact-compare", type=int, default=20)
    p_audit.set_defaults(func=cmd_audit)

    p_oracle = sub.add_parser("oracle", help="closed-form vs iterated recurrence table")
    p_oracle.add_argument("D", type=int)
    p_oracle.add_argument("eta")
    p_oracle.add_argument("k", type=int)
    p_oracle.add_argument("w0")
    p_oracle.add_argument("f0")
    p_oracle.add_argument("n", type=int)
    p_oracle.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except geometry.SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
