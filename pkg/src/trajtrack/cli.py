"""Command-line driver for the trajectory tracking stack.

Subcommands cover each pipeline stage: `verify-model` compares the
model discretizations, `optimize` runs the standalone trajectory
optimization, `gains` dumps a TVLQR gain schedule, `simulate` runs the
multi-rate closed loop, and `dump-qp` writes the assembled program as a
plain-text matrix dump. Every plot written has a CSV twin; CSV values
carry 12 significant digits so outputs diff cleanly across runs.
"""

from __future__ import annotations

import argparse
import csv
import sys
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import closed_loop, ffmpc, plots, qp
from .config import ConfigError, Scenario, load_scenario
from .trajectory import (
    augment_reference,
    reference_derived_inputs,
    save_reference_csv,
)
from .tvlqr import augment_dynamics, error_jacobian, riccati_gains
from .vehicle import VehicleState, linearize, rollout_fine, rollout_ltv, rollout_nonlinear

BUILTIN_SCENARIOS = ("fig2-verify", "sec4a-optimize", "evasive")


def _resolve_config(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    if name in BUILTIN_SCENARIOS:
        packaged = resources.files("trajtrack") / "scenarios" / f"{name}.yaml"
        return Path(str(packaged))
    raise ConfigError(
        f"config {name!r} is neither a file nor a built-in scenario {BUILTIN_SCENARIOS}"
    )


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.12g}" for v in row])


def _state_header(prefix: str) -> list[str]:
    return [f"{prefix}{name}" for name in ("s", "y", "theta", "delta", "v", "alpha")]


def _out_dir(scenario: Scenario, override: str | None) -> Path:
    out = Path(override) if override else scenario.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_verify_model(scenario: Scenario, out: Path) -> int:
    from .config import VerifySettings

    settings: VerifySettings = scenario.require("verify")
    p = scenario.model
    input_fn = settings.input_fn()
    x0 = VehicleState(v=settings.v0).as_array()
    n_steps = int(round(settings.duration / p.dt))

    fine = rollout_fine(x0, input_fn, p, settings.duration, settings.fine_dt)
    euler = rollout_nonlinear(x0, input_fn, p, n_steps)
    ltv = rollout_ltv(x0, input_fn, p, euler)

    times = np.arange(n_steps + 1) * p.dt
    header = ["t"] + _state_header("fine_") + _state_header("euler_") + _state_header("ltv_")
    rows = np.column_stack([times, fine, euler, ltv])
    _write_csv(out / "model_verify.csv", header, rows)
    plots.plot_model_verification(
        times, {"fine": fine, "euler": euler, "ltv": ltv}, out / "model_verify.svg"
    )

    gap_euler = float(np.max(np.linalg.norm((euler - fine)[:, :2], axis=1)))
    gap_ltv = float(np.max(np.linalg.norm((ltv - euler)[:, :2], axis=1)))
    print(f"verify-model: {n_steps} steps, euler-vs-fine position gap {gap_euler:.4g} m, "
          f"ltv-vs-euler position gap {gap_ltv:.4g} m")
    print(f"wrote {out / 'model_verify.csv'} and {out / 'model_verify.svg'}")
    return 0


def _optimize_scenario(scenario: Scenario):
    ff = scenario.require("ff")
    ref = scenario.reference()
    weights = ffmpc.FfWeights.from_diagonals(ff.q_diag, ff.r_diags, ref.horizon)
    x0 = VehicleState.from_array(augment_reference(ref).tau_hat[0])
    return ref, weights, x0


def cmd_optimize(scenario: Scenario, out: Path, dump_qp_too: bool) -> int:
    ref, weights, x0 = _optimize_scenario(scenario)
    plan = ffmpc.optimize_trajectory(
        ref, x0, weights, scenario.constraints, scenario.model, ffmpc.InputHistory.cold_start()
    )
    times = ref.times()
    _write_csv(
        out / "nominal_trajectory.csv",
        ["t"] + _state_header(""),
        np.column_stack([times, plan.nominal.tau_ring]),
    )
    _write_csv(
        out / "feedforward.csv",
        ["t", "delta_in", "alpha_in"],
        np.column_stack([times[:-1], plan.nominal.u_ff]),
    )
    raw_inputs = reference_derived_inputs(ref, scenario.model)
    _write_csv(
        out / "reference_inputs.csv",
        ["t", "delta_in", "alpha_in"],
        np.column_stack([times[:-1], raw_inputs]),
    )
    save_reference_csv(ref, out / "reference.csv")
    plots.plot_trajectory_compare(
        ref.states, plan.nominal.tau_ring, out / "trajectory_compare.svg"
    )
    plots.plot_inputs(
        {
            "reference-derived": (times[:-1], raw_inputs),
            "feedforward": (times[:-1], plan.nominal.u_ff),
        },
        out / "inputs.svg",
    )
    if dump_qp_too:
        program, _ = ffmpc.assemble_qp(
            ref, x0, weights, scenario.constraints, scenario.model, ffmpc.InputHistory.cold_start()
        )
        qp.save_qp_text(program, out / "qp_dump.txt")
    stats = plan.qp_stats
    print(
        f"optimize: horizon {ref.horizon}, objective {plan.objective:.6g}, "
        f"{stats.iterations} iterations, {stats.n_active} active constraints, "
        f"kkt residuals ({stats.stationarity:.2e}, {stats.primal_violation:.2e}, "
        f"{stats.comp_slack:.2e})"
    )
    print(f"wrote nominal/feedforward/reference CSVs and plots to {out}")
    return 0


def cmd_gains(scenario: Scenario, out: Path) -> int:
    ref, weights, x0 = _optimize_scenario(scenario)
    tvlqr_weights = scenario.require("tvlqr_weights")
    plan = ffmpc.optimize_trajectory(
        ref, x0, weights, scenario.constraints, scenario.model, ffmpc.InputHistory.cold_start()
    )
    _, B = linearize(VehicleState(), scenario.model)
    C = np.eye(6)
    A_aug_seq = []
    for k in range(ref.horizon):
        A_fb = error_jacobian(VehicleState.from_array(plan.nominal.tau_ring[k]), scenario.model)
        A_aug_seq.append(augment_dynamics(A_fb, B, C)[0])
    _, B_aug = augment_dynamics(np.eye(6), B, C)
    schedule = riccati_gains(A_aug_seq, B_aug, tvlqr_weights)

    times = ref.times()
    k_header = ["t"] + [f"K_{r}_{c}" for r in range(2) for c in range(12)]
    k_rows = np.column_stack([times[:-1], schedule.gains.reshape(ref.horizon, -1)])
    _write_csv(out / "gains_K.csv", k_header, k_rows)
    p_header = ["t"] + [f"P_{r}_{c}" for r in range(12) for c in range(12)]
    p_rows = np.column_stack([times, schedule.cost_to_go.reshape(ref.horizon + 1, -1)])
    _write_csv(out / "gains_P.csv", p_header, p_rows)
    print(f"gains: {ref.horizon} feedback gains, wrote gains_K.csv and gains_P.csv to {out}")
    return 0


def cmd_simulate(scenario: Scenario, out: Path, seed: int | None, mode: str | None) -> int:
    cfg = scenario.run_config(seed=seed, mode=mode)
    log = closed_loop.run(cfg)
    metrics = closed_loop.compute_metrics(log)

    header = (
        ["t"]
        + _state_header("true_")
        + _state_header("meas_")
        + _state_header("nom_")
        + [f"zt_{n}" for n in ("s", "y", "theta", "delta", "v", "alpha")]
        + [f"zi_{n}" for n in ("s", "y", "theta", "delta", "v", "alpha")]
        + ["uff_delta", "uff_alpha", "ufb_delta", "ufb_alpha", "u_delta", "u_alpha", "saturated"]
    )
    rows = np.column_stack(
        [
            log.time, log.x_true, log.x_meas, log.x_nominal, log.z_tilde,
            log.u_ff, log.u_fb, log.u_total, log.saturated.astype(float),
        ]
    )
    _write_csv(out / "run_log.csv", header, rows)
    _write_csv(
        out / "planner_log.csv",
        ["t", "objective", "iterations", "n_active"],
        np.column_stack([log.plan_time, log.plan_objective, log.plan_iterations, log.plan_active]),
    )

    lines = ["tracking error vs nominal trajectory"]
    units = {"s": "m", "y": "m", "theta": "rad", "v": "m/s"}
    md = metrics.as_dict()
    for name, unit in units.items():
        lines.append(
            f"  {name:<6} max {md[f'{name}_max']:.6e} {unit:<5} rms {md[f'{name}_rms']:.6e} {unit}"
        )
    lines.append(f"input smoothness: rms |du| {metrics.input_delta_rms:.6e}")
    lines.append(f"planner updates: {log.plan_time.shape[0]}")
    lines.append(f"saturated ticks: {int(np.sum(log.saturated))} of {log.n_ticks}")
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")

    ref = cfg.reference
    raw_inputs = reference_derived_inputs(ref, scenario.model)
    plots.plot_inputs(
        {
            "reference-derived": (ref.times()[:-1], raw_inputs),
            "feedforward": (log.time, log.u_ff),
            "closed loop": (log.time, log.u_total),
        },
        out / "inputs.svg",
    )
    err = log.x_true - log.x_nominal
    plots.plot_tracking_errors(log.time, err[:, [0, 1, 2, 4]], out / "errors.svg")
    plots.plot_trajectory_compare(
        ref.states, log.x_nominal, out / "trajectory.svg", true_states=log.x_true
    )

    print("\n".join(lines))
    if log.plan_wall_ms.size:
        print(
            f"solve wall time: median {np.median(log.plan_wall_ms):.2f} ms, "
            f"max {np.max(log.plan_wall_ms):.2f} ms (diagnostic, not logged to CSV)"
        )
    print(f"wrote run_log.csv, planner_log.csv, metrics.txt and plots to {out}")
    return 0


def cmd_dump_qp(scenario: Scenario, out: Path) -> int:
    ref, weights, x0 = _optimize_scenario(scenario)
    program, _ = ffmpc.assemble_qp(
        ref, x0, weights, scenario.constraints, scenario.model, ffmpc.InputHistory.cold_start()
    )
    path = out / "qp_dump.txt"
    qp.save_qp_text(program, path)
    print(f"dump-qp: {program.n} variables, {program.n_ineq} inequality rows -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajtrack",
        description="Trajectory optimization and feedback-feedforward tracking toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True,
                       help="scenario file path or built-in name "
                            f"({', '.join(BUILTIN_SCENARIOS)})")
        p.add_argument("--out", default=None, help="output directory (default: scenario's)")

    p_verify = sub.add_parser("verify-model", help="compare model discretizations")
    common(p_verify)

    p_opt = sub.add_parser("optimize", help="standalone trajectory optimization")
    common(p_opt)
    p_opt.add_argument("--dump-qp", action="store_true", help="also write the QP matrix dump")

    p_gains = sub.add_parser("gains", help="dump the TVLQR gain schedule")
    common(p_gains)

    p_sim = sub.add_parser("simulate", help="run the multi-rate closed loop")
    common(p_sim)
    p_sim.add_argument("--seed", type=int, default=None, help="override the plant noise seed")
    p_sim.add_argument(
        "--mode",
        choices=[closed_loop.MODE_SINGLE_SHOT, closed_loop.MODE_RECEDING],
        default=None,
        help="override the scenario's planning mode",
    )

    p_dump = sub.add_parser("dump-qp", help="write the assembled QP as plain text")
    common(p_dump)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(_resolve_config(args.config))
        out = _out_dir(scenario, args.out)
        if args.command == "verify-model":
            return cmd_verify_model(scenario, out)
        if args.command == "optimize":
            return cmd_optimize(scenario, out, args.dump_qp)
        if args.command == "gains":
            return cmd_gains(scenario, out)
        if args.command == "simulate":
            return cmd_simulate(scenario, out, args.seed, args.mode)
        if args.command == "dump-qp":
            return cmd_dump_qp(scenario, out)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, qp.QpError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
