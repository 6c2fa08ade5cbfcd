"""Command line entry point: ``qudit-qkd <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, SessionConfig, Seeds, load_config
from .hilbert import (
    BASIS_LABELS,
    MubFamily,
    builtin_mubs_16,
    family_for_dim,
    format_integer_grid,
    parse_integer_grid,
    verify_mub,
)
from .optics import OpticalSetup, render_pattern
from .photonics import NoiseConfig, ProjectionModel, PulseConfig, calibrate_noise
from .protocol import run_session, sift
from .security import build_report, solve_eta, threshold_coherent, threshold_individual
from .wire import reconcile_over_wire

log = logging.getLogger("qudit_qkd")

THRESHOLD_DIMS = (2, 4, 8, 16, 32)

# Default curves: (name, alice (basis, k), bob (basis, k))
PATTERN_CASES = (
    ("matched", (0, 13), (0, 13)),
    ("orthogonal", (0, 13), (0, 7)),
    ("cross_basis", (0, 13), (1, 13)),
)


def _state_arg(text: str) -> tuple[int, int]:
    label, _, k = text.partition(":")
    aliases = {"alpha": 0, "a": 0, "alpha_prime": 1, "alpha'": 1, "a'": 1}
    if label not in aliases or not k.isdigit():
        raise argparse.ArgumentTypeError(f"expected BASIS:K such as alpha:13 or alpha_prime:2, got {text!r}")
    return aliases[label], int(k)


def _add_session_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value session file")
    p.add_argument("--preset", choices=("mu-a", "mu-b"), help="source settings (mu, gate window)")
    p.add_argument("--cycles", type=int, help="number of clock cycles")
    p.add_argument("--model", choices=("ideal", "optical"))
    p.add_argument("--eta", type=float, help="overall transmittance x detector efficiency")
    p.add_argument("--dim", type=int, choices=(2, 16))
    p.add_argument("--jitter", type=float, help="slit phase jitter std (rad)")
    p.add_argument("--background", type=float, help="background click probability per gate")
    p.add_argument("--seed-alice", type=int)
    p.add_argument("--seed-bob", type=int)
    p.add_argument("--seed-channel", type=int)
    p.add_argument("--log", dest="log_path", help="session CSV output path")
    p.add_argument("--report", dest="report_path", help="report JSON output path")


def _session_config(args) -> SessionConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        seeds = (args.seed_alice, args.seed_bob, args.seed_channel)
        if None in seeds:
            raise ConfigError("seeds must be explicit: pass --seed-alice, --seed-bob and --seed-channel (or --config)")
        cfg = SessionConfig(Seeds(*seeds))
    overrides = (args.seed_alice, args.seed_bob, args.seed_channel)
    current = (cfg.seeds.alice, cfg.seeds.bob, cfg.seeds.channel)
    cfg = cfg.replace(seeds=Seeds(*(c if o is None else o for o, c in zip(overrides, current))))
    pulse = cfg.pulse
    if args.preset:
        pulse = PulseConfig.preset(args.preset, rep_rate=pulse.rep_rate, eta=pulse.eta, dark_rate_hz=pulse.dark_rate_hz)
    if args.eta is not None:
        pulse = PulseConfig(pulse.mu, pulse.rep_rate, pulse.window_ns, args.eta, pulse.dark_rate_hz)
    noise = cfg.noise
    if args.jitter is not None or args.background is not None:
        noise = NoiseConfig(
            noise.phase_jitter_rad if args.jitter is None else args.jitter,
            noise.background_click_prob if args.background is None else args.background,
        )
    changes = {"pulse": pulse, "noise": noise}
    for attr, value in (
        ("duration_cycles", args.cycles),
        ("model", args.model),
        ("dim", args.dim),
        ("log_path", args.log_path),
        ("report_path", args.report_path),
    ):
        if value is not None:
            changes[attr] = value
    if "dim" in changes and cfg.optics is not None and cfg.optics.dim != changes["dim"]:
        changes["optics"] = cfg.optics.replace(dim=changes["dim"])
    return cfg.replace(**changes)


def report_document(cfg: SessionConfig, report) -> str:
    return json.dumps({"config": cfg.snapshot(), "report": report.to_dict()}, indent=2, sort_keys=True) + "\n"


def _write(path, text: str) -> None:
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def cmd_verify_mubs(args) -> int:
    if args.alpha or args.alpha_prime:
        if not (args.alpha and args.alpha_prime):
            raise ConfigError("--alpha and --alpha-prime must be given together")
        family = MubFamily((parse_integer_grid(args.alpha.read_text()), parse_integer_grid(args.alpha_prime.read_text())))
    else:
        family = builtin_mubs_16()
    if args.dump:
        args.dump.mkdir(parents=True, exist_ok=True)
        for label, m in zip(BASIS_LABELS, family.integer_form):
            (args.dump / f"{label}.txt").write_text(format_integer_grid(m))
    report = verify_mub(family)
    print(report.summary())
    for f in report.failures[:20]:
        print(f"  {f.basis_a}[{f.k_a}] . {f.basis_b}[{f.k_b}] = {f.dot}")
    return 0 if report.passed else 1


def cmd_thresholds(args) -> int:
    print("D, D_ind, D_coh")
    for d in args.dims or THRESHOLD_DIMS:
        print(f"{d}, {threshold_individual(d):.4f}, {threshold_coherent(d):.4f}")
    return 0


def cmd_pattern(args) -> int:
    setup = OpticalSetup(
        dim=16,
        focal_length=args.focal_length,
        pinhole_diameter=args.pinhole,
    )
    family = builtin_mubs_16()
    if args.alice or args.bob:
        cases = [("pattern", args.alice or (0, 0), args.bob or (0, 0))]
    else:
        cases = PATTERN_CASES
    for name, a, b in cases:
        curve = render_pattern(setup, family.mask(*a), family.mask(*b), args.span, args.points)
        if args.out_dir is None:
            sys.stdout.write(curve.to_csv())
        else:
            _write(args.out_dir / f"{name}.csv", curve.to_csv())
    return 0


def cmd_run(args) -> int:
    cfg = _session_config(args)
    session = run_session(cfg)
    result = sift(session)
    report = build_report(result, cfg.pulse, cfg.wall_hours, cfg.noise)
    _write(cfg.output_path(cfg.log_path), session.to_csv())
    _write(cfg.output_path(cfg.report_path or "report.json"), report_document(cfg, report))
    q = "undefined" if report.qber is None else f"{report.qber:.4f}"
    print(
        f"cycles={cfg.duration_cycles} raw={result.raw_detections} sifted={result.sifted_detections} "
        f"N_c={result.n_correct} N_i={result.n_incorrect} QBER={q} verdict={report.verdict}"
    )
    return 0


def cmd_calibrate(args) -> int:
    cfg = _session_config(args)
    pulse = cfg.pulse
    if args.target_rate is not None:
        eta = solve_eta(args.target_rate, pulse, cfg.dim, cfg.noise)
        pulse = PulseConfig(pulse.mu, pulse.rep_rate, pulse.window_ns, eta, pulse.dark_rate_hz)
        print(f"eta = {eta:.6g}")
    if args.target_qber is not None:
        projection = ProjectionModel(family_for_dim(cfg.dim), cfg.model, cfg.optics)
        noise = calibrate_noise(args.target_qber, pulse, projection, cfg.noise.background_click_prob)
        print(f"phase_jitter_rad = {noise.phase_jitter_rad:.6g}")
        print(f"background_click_prob = {noise.background_click_prob:.6g}")
    return 0


def _serve(role: str, args) -> int:
    cfg = _session_config(args)
    # Both processes simulate the shared quantum channel from the same seeds;
    # each then reconciles using only its own view of the log.
    session = run_session(cfg)
    result = reconcile_over_wire(
        role,
        args.endpoint,
        session,
        batch_size=args.batch_size,
        retries=args.retries,
        realtime=args.realtime,
        rep_rate=cfg.pulse.rep_rate,
    )
    report = build_report(result, cfg.pulse, cfg.wall_hours, cfg.noise)
    if cfg.report_path:
        _write(cfg.output_path(cfg.report_path), report_document(cfg, report))
    print(f"{role}: {result.summary()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qudit-qkd", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-mubs", help="exact check of the built-in (or given) MUB pair")
    p.add_argument("--alpha", type=Path, help="integer grid file for the first basis")
    p.add_argument("--alpha-prime", type=Path, help="integer grid file for the second basis")
    p.add_argument("--dump", type=Path, help="write the grids as text files into this directory")
    p.set_defaults(func=cmd_verify_mubs)

    p = sub.add_parser("thresholds", help="QBER thresholds for individual and collective attacks")
    p.add_argument("dims", nargs="*", type=int)
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("pattern", help="focal-plane intensity curves as CSV")
    p.add_argument("--alice", type=_state_arg)
    p.add_argument("--bob", type=_state_arg)
    p.add_argument("--span", type=float, default=400e-6, help="metres")
    p.add_argument("--points", type=int, default=801)
    p.add_argument("--focal-length", type=float, default=0.150)
    p.add_argument("--pinhole", type=float, default=10e-6)
    p.add_argument("--out-dir", type=Path)
    p.set_defaults(func=cmd_pattern)

    p = sub.add_parser("run", help="simulate, sift and report one session")
    _add_session_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="solve eta for a sifted rate and/or jitter for a QBER")
    _add_session_args(p)
    p.add_argument("--target-rate", type=float, help="sifted detections per hour")
    p.add_argument("--target-qber", type=float)
    p.set_defaults(func=cmd_calibrate)

    for role in ("alice", "bob"):
        p = sub.add_parser(f"serve-{role}", help=f"run the {role} side of wire reconciliation")
        _add_session_args(p)
        flag = "--listen" if role == "alice" else "--connect"
        p.add_argument(flag, dest="endpoint", required=True, help="host:port")
        p.add_argument("--batch-size", type=int, default=4096)
        p.add_argument("--retries", type=int, default=10, help="reconnection attempts before giving up")
        p.add_argument("--realtime", action="store_true", help="pace batches at the clock rate")
        p.set_defaults(func=lambda a, r=role: _serve(r, a))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"qudit-qkd {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
