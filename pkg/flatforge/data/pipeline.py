"""
Run orchestration and the command-line front end.

    python -m flatforge frame --config clifford.cfg --out out/clifford

Subcommands: flow, frame, spectral, period, clifford, validate-config.
Exit codes: 0 ok, 1 invariant failure (or any other flatforge error),
2 config error.
"""
import argparse
import logging
import os
import sys

import numpy as np

from flatforge.algebra.loop_algebra import DecompositionRule
from flatforge.algebra.spectral import DRIFT_Z_SAMPLES, Regularity, drift_table, isospectral_drift, mu_eigenvalues, spectral_record
from flatforge.data import io
from flatforge.data.config import RunConfig, apply_overrides, load_config, serialize_config
from flatforge.data.presets import clifford, random_initial
from flatforge.data.validation import require, validate_flow, validate_frames
from flatforge.errors import ConfigError, FlatforgeError, InvariantError, SpectralError
from flatforge.flows.aks_flow import FlowConfig, GridSpec, integrate_flow
from flatforge.flows.frame_builder import clifford_immersion, immersion_samples, integrate_frame
from flatforge.flows.periodicity import detect_period, format_report

logger = logging.getLogger(__name__)

COMMANDS = ("flow", "frame", "spectral", "period", "clifford", "validate-config")
CLIFFORD_TOL = 1e-6


class Setup:
    """Initial data resolved from a RunConfig: X0, rule, coordinate change and F0."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.coords = None
        self.F0 = None
        self.rule = cfg.rule
        self.preset = None
        params = cfg.clifford_params()
        if params is not None:
            self.preset = clifford(*params, z0=cfg.z0)
            self.X0 = self.preset.X0
            self.coords = self.preset.coords
            self.F0 = self.preset.F0
            if cfg.rule is not DecompositionRule.SIMPLE:
                logger.warning("clifford preset runs with the simple rule, ignoring rule = %s", cfg.rule.value)
            self.rule = DecompositionRule.SIMPLE
        elif cfg.initial == "explicit":
            self.X0 = cfg.explicit_element()
        else:
            self.X0 = random_initial(cfg.n, cfg.d, cfg.seed, cfg.scale)
        self.grid = GridSpec(cfg.grid_lower, cfg.grid_upper, cfg.grid_spacing)

    def flow_config(self):
        return FlowConfig(n=self.cfg.n, rule=self.rule, h=self.cfg.h, grid=self.grid, coords=self.coords)


def _out(cfg, name):
    return os.path.join(cfg.out, name)


def run_flow(setup: Setup):
    cfg = setup.cfg
    flow = integrate_flow(setup.X0, setup.flow_config())
    require(validate_flow(flow, cfg.drift_budget), "aks_flow")
    return flow


def run_frames(setup: Setup, flow):
    cfg = setup.cfg
    frames = integrate_frame(flow, setup.rule, cfg.z0, F0=setup.F0, workers=cfg.workers)
    samples = immersion_samples(flow, frames, cfg.column)
    require(validate_frames(frames, samples), "frame_builder")
    return frames, samples


def write_flow(cfg, flow):
    io.write_text(_out(cfg, "flow_samples.txt"), io.flow_samples_text(flow))
    io.write_csv(io.residual_table(flow), _out(cfg, "flow_residuals.csv"))
    io.write_csv(drift_table(flow), _out(cfg, "drift_table.csv"))


def write_frames(cfg, grid, samples):
    io.write_csv(io.immersion_table(samples), _out(cfg, "immersion.csv"))
    io.write_text(_out(cfg, "mesh.txt"), io.mesh_text(grid, samples))


def run_spectral(setup: Setup, flow):
    cfg = setup.cfg
    record = spectral_record(setup.X0)
    if record.regular.status is not Regularity.YES:
        logger.warning("regularity %s: %s", record.regular.status.value, "; ".join(record.regular.reasons))
    drift = isospectral_drift(flow)
    mu_samples = []
    for z in DRIFT_Z_SAMPLES[:4]:
        for i in range(1, cfg.n + 1):
            try:
                mu_samples.append(mu_eigenvalues(setup.X0, i, z))
            except SpectralError as err:
                logger.warning("skipping mu sample: %s", err)
    io.write_text(_out(cfg, "spectral_report.txt"), io.spectral_report_text(record, drift))
    io.write_csv(drift_table(flow), _out(cfg, "drift_table.csv"))
    io.write_csv(io.mu_table(mu_samples), _out(cfg, "mu_samples.csv"))
    return record


def run_period(setup: Setup, flow, frames):
    cfg = setup.cfg
    if not cfg.periods:
        logger.warning("no candidate periods configured")
    reports = [detect_period(flow, frames, P) for P in cfg.periods]
    for report in reports:
        logger.info("period %s: %s", tuple(report.P), report.kind.value)
    io.write_text(_out(cfg, "period_reports.txt"), "\n".join(format_report(r) for r in reports))
    return reports


def run_clifford(setup: Setup, flow, frames, samples):
    """Compare the mesh with the closed-form Clifford immersion."""
    if setup.preset is None:
        raise ConfigError("clifford subcommand needs initial = clifford(a, b)", field="initial")
    a, b = setup.preset.a, setup.preset.b
    column = setup.cfg.n + 1
    deviation = 0.0
    for frame in frames.values():
        expected = clifford_immersion(a, b, frame.t)
        deviation = max(deviation, float(np.max(np.abs(frame.column(column) - expected))))
    text = f"a = {a!r}\nb = {b!r}\npoints = {len(samples)}\nmax_deviation = {deviation!r}\n"
    io.write_text(_out(setup.cfg, "clifford_check.txt"), text)
    if deviation > CLIFFORD_TOL:
        raise InvariantError("mesh deviates from the closed-form Clifford torus", "frame_builder", deviation)
    logger.info("clifford mesh matches closed form within %.2e", deviation)
    return deviation


def run(cfg: RunConfig, command: str) -> int:
    """Run one subcommand; artifacts go to cfg.out. Raises FlatforgeError subclasses on failure."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    if command == "validate-config":
        sys.stdout.write(serialize_config(cfg))
        return 0
    setup = Setup(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    flow = run_flow(setup)
    if command == "flow":
        write_flow(cfg, flow)
    elif command == "spectral":
        run_spectral(setup, flow)
    else:
        frames, samples = run_frames(setup, flow)
        if command in ("frame", "clifford"):
            write_frames(cfg, setup.grid, samples)
        if command == "clifford":
            run_clifford(setup, flow, frames, samples)
        elif command == "period":
            run_period(setup, flow, frames)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="flatforge", description="k-symmetric AKS flows, frames and flat immersions")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="path to a run configuration")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out")
    parser.add_argument("--h", type=float)
    parser.add_argument("--z0", type=float)
    parser.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        try:
            cfg = load_config(args.config) if args.config else RunConfig()
        except OSError as err:
            raise ConfigError(f"cannot read config: {err}")
        cfg = apply_overrides(cfg, seed=args.seed, out=args.out, h=args.h, z0=args.z0)
        return run(cfg, args.command)
    except ConfigError as err:
        logger.error("config error: %s", err)
        return 2
    except InvariantError as err:
        logger.error("invariant failure %s", err)
        return 1
    except FlatforgeError as err:
        logger.error("%s: %s", type(err).__name__, err)
        return 1


if __name__ == "__main__":
    sys.exit(main())
