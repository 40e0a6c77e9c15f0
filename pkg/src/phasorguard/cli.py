"""Command-line interface.

Exit codes: 0 success, 1 malformed input or option, 2 vulnerable pairs found
(``analyze``) or alarm raised (``monitor``), 3 hardening infeasible,
4 infeasible attack synthesis.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attack import AttackSpec, AttackVector, evaluate_attack, offsets_to_u, synthesize_multi, synthesize_pair
from .datasets import ieee39
from .estimation import chi2_dof, chi2_threshold, compute_Cbox, compute_F, compute_wls_verification
from .estimation import lnr_test, wls_residuals
from .exceptions import HardeningInfeasibleError, InfeasibleAttackError, PhasorGuardError
from .grid import build_topology, dumps_canonical, grid_to_dict, load_grid
from .secure_grid import SecurityConfig, secure, verify_hardened
from .simulator import (
    AttackPlan, DetectorConfig, ProfileConfig, analyze_frames, frame_rng, generate_states, measure,
    measure_series, read_frames_csv, write_frames_csv, STREAM_NOISE,
)
from .vulnerability import analyze_grid, attack_indicator

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_VULNERABLE = 2
EXIT_HARDENING = 3
EXIT_SYNTHESIS = 4

BUILTIN_GRIDS = {"ieee39": ieee39}


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 means "vulnerable" here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _unit_interval(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {text}")
    return v


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive value, got {text}")
    return v


def _angles(text: str) -> list[float]:
    return [float(a) for a in text.split(",") if a.strip()] if text else []


def load_grid_arg(spec: str):
    if spec in BUILTIN_GRIDS:
        return BUILTIN_GRIDS[spec]()
    return load_grid(spec)


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _frame(args, grid):
    """Frame ``args.frame_index`` from ``--frames`` or one simulated frame."""
    T = build_topology(grid)
    if args.frames:
        _, Z = read_frames_csv(args.frames, grid.m)
        return Z[args.frame_index]
    series = generate_states(grid, ProfileConfig(), args.frame_index + 1, args.seed)
    sm, sp = grid.noise_sigmas()
    return measure(T, series.states[-1], sm, sp, frame_rng(args.seed, STREAM_NOISE, args.frame_index))


# -- subcommands ----------------------------------------------------------------

def cmd_analyze(args) -> int:
    grid = load_grid_arg(args.grid)
    z = _frame(args, grid) if (args.frames or args.with_frame) else None
    report = analyze_grid(grid, eta=args.eta, z=z)
    doc = report.to_dict()
    doc["critical_pair_fraction"] = verify_hardened(grid, SecurityConfig(eta=args.eta)).critical_pair_fraction
    _emit(dumps_canonical(doc), args.out)
    n = len(report.structural_pairs)
    print(f"{n} site pair(s) with structural ERR >= {args.eta}", file=sys.stderr)
    return EXIT_VULNERABLE if n else EXIT_OK


def cmd_secure(args) -> int:
    grid = load_grid_arg(args.grid)
    cfg = SecurityConfig(eta=args.eta, candidate_policy=args.policy, max_iterations=args.max_iterations)
    hardened, report = secure(grid, cfg)
    _emit(dumps_canonical(grid_to_dict(hardened)), args.out)
    if args.report:
        Path(args.report).write_text(dumps_canonical(report.to_dict(grid)))
    print(f"added {len(report.added)} phasor(s); max pair ERR {report.final_max_err:.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_attack(args) -> int:
    grid = load_grid_arg(args.grid)
    try:
        spec = AttackSpec.from_dict(json.loads(Path(args.spec).read_text()))
    except json.JSONDecodeError as exc:
        raise PhasorGuardError(f"{args.spec}: invalid JSON ({exc})") from exc
    for s in spec.target_sites:
        grid.site(s)
    z = _frame(args, grid)
    T = build_topology(grid)
    F = compute_F(T)
    sets = [grid.site_indices(s) for s in spec.target_sites]
    if args.synthesize:
        if len(sets) == 2:
            u = synthesize_pair(F, z, sets[0], sets[1], args.alpha_hint)
        elif len(sets) >= 3:
            u = synthesize_multi(F, z, sets, _angles(args.free_angles) or [0.0] * (len(sets) - 2), args.alpha_hint)
        else:
            raise InfeasibleAttackError("synthesis needs at least two target sites")
        spec = AttackSpec(spec.target_sites, tuple(np.angle(u.u) / (2 * np.pi * spec.frequency_f)),
                          spec.frequency_f)
    else:
        u = offsets_to_u(spec)
    V = compute_wls_verification(T, compute_Cbox(z, grid))
    phi = attack_indicator(grid, spec.target_sites)
    out = evaluate_attack(T, V, z, u, phi, F, args.threshold)
    # The operator sees only the attacked frame, so detection uses its own covariance.
    Va = compute_wls_verification(T, compute_Cbox(out.z_attacked, grid))
    chi_thr = chi2_threshold(chi2_dof(T), args.significance)
    ra = wls_residuals(Va, out.z_attacked, T.pseudo_mask)
    doc = out.to_dict()
    doc.update(
        spec=spec.to_dict(),
        u=[{"re": float(v.real), "im": float(v.imag)} for v in u.u],
        synthesized=bool(args.synthesize),
        chi2_flag_before=bool(out.chi2_before > chi_thr),
        chi2_flag_after=bool(ra.chi2_statistic > chi_thr),
        undetectable=bool(out.residual_change_norm <= 1e-7 * np.linalg.norm(z)),
        lnr_observed=lnr_test(ra, args.threshold).max_value,
        detected=bool(lnr_test(ra, args.threshold).flag or ra.chi2_statistic > chi_thr),
    )
    _emit(dumps_canonical(doc), args.out)
    return EXIT_OK


def _detector(args) -> DetectorConfig:
    return DetectorConfig(lnr_threshold=args.threshold, chi2_significance=args.significance,
                          window=args.window, site_band=args.site_band, pair_band=args.pair_band)


def _attack_plan(args) -> AttackPlan | None:
    if not args.attack:
        return None
    spec = AttackSpec.from_dict(json.loads(Path(args.attack).read_text()))
    if args.synthesize:
        return AttackPlan(spec.target_sites, synthesize=True, alpha2_hint=args.alpha_hint,
                          free_angles=tuple(_angles(args.free_angles)), frequency_f=spec.frequency_f,
                          start=args.attack_start, stop=args.attack_stop)
    return AttackPlan(spec.target_sites, offsets_d=spec.offsets_d, frequency_f=spec.frequency_f,
                      start=args.attack_start, stop=args.attack_stop)


def cmd_simulate(args) -> int:
    grid = load_grid_arg(args.grid)
    profile = ProfileConfig(sigma_mag_state=args.sigma_mag_state, sigma_ang_state=args.sigma_ang_state)
    series = generate_states(grid, profile, args.steps, args.seed)
    Z = measure_series(grid, series, seed=args.seed, noise_scale=args.noise_scale)
    res = analyze_frames(grid, Z, series.times, _detector(args), _attack_plan(args),
                         meta={"seed": args.seed, "noise_scale": args.noise_scale, "dt": series.dt})
    res.write(args.out, args.format)
    if args.save_frames:
        write_frames_csv(Path(args.out) / "frames.csv", series.times, Z)
    s = res.summary()
    print(f"{s['frames']} frames; LNR flag rate {s['lnr_flag_rate']:.3f}", file=sys.stderr)
    return EXIT_OK


def cmd_monitor(args) -> int:
    grid = load_grid_arg(args.grid)
    if args.frames:
        times, Z = read_frames_csv(args.frames, grid.m)
        meta = {"frames": str(args.frames)}
    else:
        series = generate_states(grid, ProfileConfig(), args.steps, args.seed)
        Z = measure_series(grid, series, seed=args.seed)
        times, meta = series.times, {"seed": args.seed}
    res = analyze_frames(grid, Z, times, _detector(args), None, meta=meta)
    res.write(args.out, args.format)
    s = res.summary()
    alarms = s["site_alarm_frames"] + s["pair_alarm_frames"]
    print(f"{s['frames']} frames; {s['site_alarm_frames']} site-alarm and {s['pair_alarm_frames']} "
          f"pair-alarm frame(s)", file=sys.stderr)
    return EXIT_VULNERABLE if alarms else EXIT_OK


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="phasorguard", description="Time-synchronization attack analysis for PMU grids.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--grid", default="ieee39", help="grid JSON path or 'ieee39' (default)")
    common.add_argument("--out", default=None, help="output path (default: stdout / current dir)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--eta", type=_unit_interval, default=0.95, help="structural ERR threshold")
    common.add_argument("--threshold", type=_positive, default=3.0, help="LNR threshold")
    common.add_argument("--significance", type=_unit_interval, default=0.01, help="chi-square significance")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    frames = _Parser(add_help=False)
    frames.add_argument("--frames", default=None, help="frames CSV (t, re_0, im_0, ...)")
    frames.add_argument("--frame-index", type=int, default=0)

    a = sub.add_parser("analyze", parents=[common, frames], help="structural pair table and criticality")
    a.add_argument("--with-frame", action="store_true", help="add general metrics on a simulated frame")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("secure", parents=[common], help="harden the PMU allocation")
    s.add_argument("--policy", choices=("branch_first", "voltage_first"), default="branch_first")
    s.add_argument("--max-iterations", type=int, default=100)
    s.add_argument("--report", default=None, help="hardening report JSON path")
    s.set_defaults(func=cmd_secure)

    at = sub.add_parser("attack", parents=[common, frames], help="apply or synthesize an attack on one frame")
    at.add_argument("--spec", required=True, help="attack spec JSON")
    at.add_argument("--synthesize", action="store_true", help="solve for undetectable offsets")
    at.add_argument("--alpha-hint", type=float, default=0.1)
    at.add_argument("--free-angles", default="", help="comma-separated angles (rad) for sites 3..q")
    at.set_defaults(func=cmd_attack)

    monitoring = _Parser(add_help=False)
    monitoring.add_argument("--steps", type=int, default=100, help="number of frames to simulate")
    monitoring.add_argument("--window", type=int, default=50)
    monitoring.add_argument("--site-band", type=float, default=0.05)
    monitoring.add_argument("--pair-band", type=float, default=0.01)

    sm = sub.add_parser("simulate", parents=[common, monitoring], help="simulate a scenario")
    sm.add_argument("--attack", default=None, help="attack spec JSON")
    sm.add_argument("--synthesize", action="store_true")
    sm.add_argument("--alpha-hint", type=float, default=0.1)
    sm.add_argument("--free-angles", default="")
    sm.add_argument("--attack-start", type=int, default=0)
    sm.add_argument("--attack-stop", type=int, default=None)
    sm.add_argument("--noise-scale", type=float, default=1.0)
    sm.add_argument("--sigma-mag-state", type=float, default=0.01)
    sm.add_argument("--sigma-ang-state", type=float, default=0.02)
    sm.add_argument("--save-frames", action="store_true", help="also write frames.csv")
    sm.set_defaults(func=cmd_simulate)

    mo = sub.add_parser("monitor", parents=[common, monitoring], help="metrics, rolling minima and alarms")
    mo.add_argument("--frames", default=None, help="frames CSV to monitor (default: simulate)")
    mo.set_defaults(func=cmd_monitor)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("simulate", "monitor") and args.out is None:
        args.out = "."
    try:
        return args.func(args)
    except HardeningInfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HARDENING
    except InfeasibleAttackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SYNTHESIS
    except (PhasorGuardError, ValueError, KeyError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
