"""Command-line front end: simulate | infer | evaluate | report.

One binary with subcommands sharing a single INI config (sections
``[benchmark]``, ``[subspace]``, ``[training]``, ``[inference]``,
``[evaluation]``).  All randomness flows from the config seed through the
per-run stream policy, so reruns with the same config are bitwise
reproducible.  Matrices are persisted in the exact binary container,
human-facing tables as CSV, and every command writes a manifest tying its
outputs to the config hash and seed.

Exit codes: 0 success, 2 config error, 3 numerical failure,
4 missing artifact.
"""

import argparse
import configparser
import csv
import dataclasses
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    ScalarOuSpec,
    Heat1dSpec,
    Heat2dSpec,
    build_benchmark,
    default_grid,
    relative_errors,
    snr_sequence,
    weak_errors,
)
from .container import read_container, write_container
from .inference import InferenceConfig, InferredRom, infer_rom_from_ensembles
from .model import CosineControl, TimeGrid, ZeroControl, galerkin_project, parse_control
from .moments import MomentAccumulator, empirical_moments, exact_moments
from .sim import SeedPolicy, SnapshotEnsemble, iter_state_batches
from .subspace import ReductionBasis, basis_from_gram

__all__ = ["main", "ConfigError", "MissingArtifactError"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_MISSING = 4


class ConfigError(ValueError):
    """Invalid or missing configuration."""


class MissingArtifactError(FileNotFoundError):
    """A required input artifact does not exist."""


# Config handling =============================================================

@dataclasses.dataclass
class ToolConfig:
    """Parsed and validated tool configuration."""

    benchmark: str
    seed: int
    grid: TimeGrid
    subspace_samples: int
    subspace_control: object
    constant_inputs: int
    reduced_dims: tuple
    sample_sizes: tuple
    inference: InferenceConfig
    mode: str
    eval_substeps: int
    eval_samples: int
    test_control: object
    benchmark_options: dict
    raw_text: str

    @property
    def has_training(self):
        return bool(self.reduced_dims)

    def config_hash(self):
        return hashlib.sha256(self.raw_text.encode("utf-8")).hexdigest()


def _get(parser, section, key, cast, default=None, required=False):
    if not parser.has_option(section, key):
        if required:
            raise ConfigError(f"missing required field [{section}] {key}")
        return default
    raw = parser.get(section, key)
    try:
        return cast(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for [{section}] {key}: {raw!r}") from exc


def _int_list(raw):
    return tuple(int(part) for part in raw.replace(" ", "").split(",") if part)


def _bool(raw):
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def load_config(path, seed_override=None, mode_override=None):
    """Parse and validate the INI config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if not parser.has_section("benchmark"):
        raise ConfigError("missing required section [benchmark]")
    name = _get(parser, "benchmark", "name", str, required=True)
    if name not in ("heat1d", "heat2d", "ou"):
        raise ConfigError(f"unknown benchmark name {name!r}")
    seed = seed_override
    if seed is None:
        seed = _get(parser, "benchmark", "seed", int, required=True)
    options = {}
    if name == "heat1d":
        options["n"] = _get(parser, "benchmark", "n", int, default=100)
        if options["n"] < 3:
            raise ConfigError("heat1d needs n >= 3")
    elif name == "heat2d":
        options["target_dim"] = _get(parser, "benchmark", "target_dim", int, default=1016)
    else:
        options["rate"] = _get(parser, "benchmark", "rate", float, default=-1.0)
        options["noise"] = _get(parser, "benchmark", "noise", float, default=1.0)
        options["initial_value"] = _get(
            parser, "benchmark", "initial_value", float, default=1.0
        )

    base_grid = default_grid(name)
    steps = _get(parser, "subspace", "steps", int, default=base_grid.step_count)
    step_size = _get(parser, "subspace", "step_size", float, default=base_grid.step_size)
    try:
        grid = TimeGrid(step_count=steps, step_size=step_size)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    samples = _get(parser, "subspace", "samples", int, default=1000)
    if samples < 1:
        raise ConfigError("field [subspace] samples must be >= 1")
    control_label = _get(parser, "subspace", "control", str, default=None)
    if control_label is None:
        sub_control = CosineControl(1.0, 2.0, grid.horizon)
    else:
        sub_control = parse_control(control_label, horizon=grid.horizon)

    reduced_dims = ()
    sample_sizes = ()
    constant_inputs = 0
    if parser.has_section("training"):
        reduced_dims = _get(parser, "training", "reduced_dims", _int_list, required=True)
        sample_sizes = _get(parser, "training", "sample_sizes", _int_list, required=True)
        constant_inputs = _get(parser, "training", "constant_inputs", int, default=21)
        if not reduced_dims or min(reduced_dims) < 1:
            raise ConfigError("field [training] reduced_dims must be positive integers")
        if not sample_sizes or min(sample_sizes) < 2:
            raise ConfigError("field [training] sample_sizes must be >= 2")
        if constant_inputs < 1:
            raise ConfigError("field [training] constant_inputs must be >= 1")

    inference = InferenceConfig(
        gamma1=_get(parser, "inference", "gamma1", float, default=0.0),
        gamma2=_get(parser, "inference", "gamma2", float, default=0.0),
        truncation_fraction=_get(
            parser, "inference", "truncation_fraction", float, default=1e-3
        ),
        drop_endpoint_rows=_get(parser, "inference", "drop_endpoints", _bool, default=True),
        rank_tolerance=_get(parser, "inference", "rank_tolerance", float, default=None),
    )

    mode = mode_override or _get(parser, "evaluation", "mode", str, default="oracle")
    if mode not in ("oracle", "montecarlo"):
        raise ConfigError(f"unknown evaluation mode {mode!r}")
    eval_substeps = _get(parser, "evaluation", "substeps", int, default=10)
    eval_samples = _get(parser, "evaluation", "eval_samples", int, default=10000)
    test_label = _get(parser, "evaluation", "control", str, default=None)
    if test_label is None:
        test_control = CosineControl(1.0, 5.0, grid.horizon)
    else:
        test_control = parse_control(test_label, horizon=grid.horizon)

    return ToolConfig(
        benchmark=name,
        seed=seed,
        grid=grid,
        subspace_samples=samples,
        subspace_control=sub_control,
        constant_inputs=constant_inputs,
        reduced_dims=reduced_dims,
        sample_sizes=sample_sizes,
        inference=inference,
        mode=mode,
        eval_substeps=eval_substeps,
        eval_samples=eval_samples,
        test_control=test_control,
        benchmark_options=options,
        raw_text=text,
    )


def _build_fom(cfg):
    if cfg.benchmark == "heat1d":
        return build_benchmark("heat1d", heat1d=Heat1dSpec(num_points=cfg.benchmark_options["n"]))
    if cfg.benchmark == "heat2d":
        return build_benchmark(
            "heat2d", heat2d=Heat2dSpec(target_dim=cfg.benchmark_options["target_dim"])
        )
    return build_benchmark(
        "ou",
        ou=ScalarOuSpec(
            rate=cfg.benchmark_options["rate"],
            noise=cfg.benchmark_options["noise"],
            initial_value=cfg.benchmark_options["initial_value"],
        ),
    )


# Manifests ===================================================================

def write_manifest(out_dir, name, cfg, stages, parameters=None):
    manifest = {
        "tool_version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "stages": stages,
    }
    if parameters:
        manifest["parameters"] = parameters
    path = Path(out_dir) / name
    path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return path


def verify_manifest(path, cfg=None):
    """Check that a manifest's artifacts exist (and its config hash matches)."""
    path = Path(path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    missing = []
    for stage in manifest["stages"]:
        for artifact in stage.get("outputs", []):
            if not (path.parent / artifact).exists():
                missing.append(artifact)
    if missing:
        raise MissingArtifactError(f"manifest references missing artifacts: {missing}")
    if cfg is not None and manifest["config_hash"] != cfg.config_hash():
        raise ConfigError("manifest config hash does not match the supplied config")
    return manifest


# Ensemble persistence ========================================================

def _ensemble_to_container(ensemble):
    num_paths, steps, dim = ensemble.states.shape
    packed = ensemble.states.reshape(num_paths * steps, dim).T
    matrices = {"states": packed}
    metadata = {
        "kind": "ensemble",
        "layout": "path-major",
        "num_paths": num_paths,
        "step_count": steps - 1,
        "step_size": repr(ensemble.grid.step_size),
        "input_id": ensemble.input_id,
        "base_seed": ensemble.seed_info.get("base_seed", ""),
        "run_id": ensemble.seed_info.get("run_id", ""),
    }
    return matrices, metadata


def _ensemble_from_container(path):
    matrices, metadata = read_container(path)
    if metadata.get("kind") != "ensemble":
        raise ConfigError(f"{path} does not hold an ensemble")
    packed = matrices["states"]
    num_paths = int(metadata["num_paths"])
    steps = int(metadata["step_count"]) + 1
    grid = TimeGrid(step_count=steps - 1, step_size=float(metadata["step_size"]))
    states = packed.T.reshape(num_paths, steps, packed.shape[0])
    return SnapshotEnsemble(
        states=states,
        grid=grid,
        input_id=metadata["input_id"],
        seed_info={"base_seed": metadata["base_seed"], "run_id": metadata["run_id"]},
    )


def _basis_to_container(basis):
    return (
        {"basis": basis.matrix, "singular_values": basis.singular_values},
        {"kind": "basis", "source": basis.source},
    )


def _basis_from_container(path):
    matrices, metadata = read_container(path)
    if metadata.get("kind") != "basis":
        raise ConfigError(f"{path} does not hold a reduction basis")
    return ReductionBasis(
        matrix=matrices["basis"],
        singular_values=matrices["singular_values"].reshape(-1),
        source=metadata.get("source", "state-snapshots"),
    )


def _rom_to_container(rom, reduced_dim, sample_size):
    matrices = {
        "drift_linear": rom.drift_linear,
        "drift_input": rom.drift_input,
        "diffusion": rom.diffusion if rom.noise_dim else np.zeros((rom.reduced_dim, 0)),
    }
    for i, n_i in enumerate(rom.drift_bilinear):
        matrices[f"drift_bilinear_{i}"] = n_i
    diag = rom.diagnostics
    metadata = {
        "kind": "inferred-rom",
        "reduced_dim": reduced_dim,
        "sample_size": sample_size,
        "noise_dim": rom.noise_dim,
        "input_dim": rom.drift_input.shape[1],
        "drift_residual_norm": repr(diag["drift_residual_norm"]),
        "diffusion_residual_rms": repr(diag["diffusion_residual_rms"]),
        "condition_number": repr(diag["condition_number"]),
        "drift_rank": diag["drift_rank"],
        "rank_deficient": diag["drift_rank_deficient"],
        "gamma1": repr(diag["gamma1"]),
        "gamma2": repr(diag["gamma2"]),
        "truncated_eigenvalues": ",".join(
            repr(v) for v in np.asarray(diag["truncated_eigenvalues"]).tolist()
        ),
    }
    return matrices, metadata


def _rom_from_container(path):
    matrices, metadata = read_container(path)
    if metadata.get("kind") != "inferred-rom":
        raise ConfigError(f"{path} does not hold an inferred model")
    m = int(metadata["input_dim"])
    bilinear = tuple(matrices[f"drift_bilinear_{i}"] for i in range(m))
    diffusion = matrices["diffusion"]
    return InferredRom(
        drift_linear=matrices["drift_linear"],
        drift_input=matrices["drift_input"],
        drift_bilinear=bilinear,
        diffusion=diffusion,
        noise_dim=diffusion.shape[1],
        diagnostics={"condition_number": float(metadata["condition_number"])},
    )


# Training-run bookkeeping ====================================================

def _training_runs(cfg):
    """(run_id, control, needs_basis_column) for every training pair."""
    runs = []
    k = cfg.constant_inputs
    from .model import ConstantControl

    for i in range(1, k + 1):
        runs.append((f"train-const-{i:02d}", ConstantControl([-2.0 + 4.0 * i / k]), None))
    for j in range(1, max(cfg.reduced_dims) + 1):
        runs.append((f"train-ic-{j:02d}", None, j - 1))  # zero control, basis column IC
    return runs


def _simulate_ensemble(system, control, grid, num_paths, policy, run_id):
    blocks = [
        states
        for _, states in iter_state_batches(system, control, grid, num_paths, policy, run_id)
    ]
    states = np.concatenate(blocks, axis=0) if len(blocks) > 1 else blocks[0]
    return SnapshotEnsemble(
        states=states,
        grid=grid,
        input_id=control.describe(),
        seed_info={"base_seed": policy.base_seed, "run_id": run_id},
    )


# Commands ====================================================================

def cmd_simulate(cfg, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fom = _build_fom(cfg)
    policy = SeedPolicy(cfg.seed)
    grid = cfg.grid
    stages = []

    subspace_ens = _simulate_ensemble(
        fom, cfg.subspace_control, grid, cfg.subspace_samples, policy, "subspace"
    )
    matrices, metadata = _ensemble_to_container(subspace_ens)
    write_container(out_dir / "subspace.somx", matrices, metadata)
    stages.append({"name": "subspace", "outputs": ["subspace.somx"]})

    if cfg.has_training:
        r_max = max(cfg.reduced_dims)
        gram = np.zeros((fom.state_dim, fom.state_dim))
        flat = subspace_ens.states.reshape(-1, fom.state_dim)
        gram += flat.T @ flat
        basis = basis_from_gram(gram, r_max)
        write_container(out_dir / "basis.somx", *_basis_to_container(basis))
        stages.append({"name": "basis", "outputs": ["basis.somx"]})

        outputs = []
        l_max = max(cfg.sample_sizes)
        for run_id, control, basis_column in _training_runs(cfg):
            system = fom
            if basis_column is not None:
                control = ZeroControl(fom.input_dim)
                system = dataclasses.replace(
                    fom, initial_mean=basis.matrix[:, basis_column]
                )
            ensemble = _simulate_ensemble(system, control, grid, l_max, policy, run_id)
            for size in cfg.sample_sizes:
                sliced = SnapshotEnsemble(
                    states=ensemble.states[:size],
                    grid=grid,
                    input_id=ensemble.input_id,
                    seed_info=ensemble.seed_info,
                )
                matrices, metadata = _ensemble_to_container(sliced)
                name = f"{run_id}-L{size}.somx"
                write_container(out_dir / name, matrices, metadata)
                outputs.append(name)
        stages.append({"name": "training", "outputs": outputs})

    write_manifest(out_dir, "manifest-simulate.json", cfg, stages)
    return EXIT_OK


def _require(path):
    if not Path(path).exists():
        raise MissingArtifactError(f"required artifact not found: {path}")
    return path


def cmd_infer(cfg, data_dir, out_dir):
    if not cfg.has_training:
        raise ConfigError("config has no [training] section; nothing to infer")
    data_dir = Path(data_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    basis = _basis_from_container(_require(data_dir / "basis.somx"))
    runs = _training_runs(cfg)
    outputs = []
    for r in cfg.reduced_dims:
        v_r = basis.truncated(r)
        for size in cfg.sample_sizes:
            ensembles = []
            controls = []
            for run_id, control, basis_column in runs:
                if basis_column is not None and basis_column >= r:
                    continue
                ensemble = _ensemble_from_container(
                    _require(data_dir / f"{run_id}-L{size}.somx")
                )
                ensembles.append(ensemble)
                controls.append(
                    parse_control(ensemble.input_id, horizon=cfg.grid.horizon)
                )
            rom = infer_rom_from_ensembles(ensembles, controls, v_r, cfg.inference)
            if rom.diagnostics["drift_rank_deficient"]:
                print(
                    f"warning: rank-deficient drift data at r={r} L={size} "
                    f"(condition number {rom.diagnostics['condition_number']:.3e})",
                    file=sys.stderr,
                )
            name = f"rom-r{r}-L{size}.somx"
            write_container(out_dir / name, *_rom_to_container(rom, r, size))
            outputs.append(name)
    write_manifest(
        out_dir,
        "manifest-infer.json",
        cfg,
        [{"name": "infer", "outputs": outputs}],
        parameters={
            "gamma1": cfg.inference.gamma1,
            "gamma2": cfg.inference.gamma2,
            "truncation_fraction": cfg.inference.truncation_fraction,
            "drop_endpoint_rows": cfg.inference.drop_endpoint_rows,
        },
    )
    return EXIT_OK


def _format_cell(value):
    if value is None:
        return "NA"
    return repr(float(value))


def _write_metric_csv(path, metric_rows, reduced_dims, series):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r"] + series)
        for r in reduced_dims:
            writer.writerow([r] + [_format_cell(metric_rows.get((r, label))) for label in series])


def cmd_evaluate(cfg, data_dir, out_dir):
    if not cfg.has_training:
        raise ConfigError("config has no [training] section; nothing to evaluate")
    data_dir = Path(data_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fom = _build_fom(cfg)
    grid = cfg.grid
    policy = SeedPolicy(cfg.seed)
    basis = _basis_from_container(_require(data_dir / "basis.somx"))

    if cfg.mode == "oracle":
        fom_test = exact_moments(fom, cfg.test_control, grid, cfg.eval_substeps)
    else:
        acc = MomentAccumulator(grid, fom.state_dim)
        for start, block in iter_state_batches(
            fom, cfg.test_control, grid, cfg.eval_samples, policy, "test-fom"
        ):
            acc.consume(start, block)
        fom_test = acc.moments()

    def rom_moments(system, run_id):
        if cfg.mode == "oracle":
            return exact_moments(system, cfg.test_control, grid, cfg.eval_substeps)
        acc = MomentAccumulator(grid, system.state_dim)
        for start, block in iter_state_batches(
            system, cfg.test_control, grid, cfg.eval_samples, policy, run_id
        ):
            acc.consume(start, block)
        return acc.moments()

    series = ["pod"] + [f"opinf-L{size}" for size in cfg.sample_sizes]
    tables = {"e_mean": {}, "e_cov": {}, "e_phi1": {}, "e_phi2": {}, "noise_dim": {}}
    for r in cfg.reduced_dims:
        v_r = basis.truncated(r)
        pod_system = galerkin_project(fom, v_r.matrix)
        pod_m = rom_moments(pod_system, f"test-pod-r{r}")
        e_mean, e_cov = relative_errors(fom_test, pod_m, v_r.matrix)
        e1, e2 = weak_errors(fom_test, pod_m, v_r.matrix)
        tables["e_mean"][(r, "pod")] = e_mean
        tables["e_cov"][(r, "pod")] = e_cov
        tables["e_phi1"][(r, "pod")] = e1
        tables["e_phi2"][(r, "pod")] = e2
        tables["noise_dim"][(r, "pod")] = pod_system.noise_dim
        for size in cfg.sample_sizes:
            label = f"opinf-L{size}"
            rom = _rom_from_container(_require(data_dir / f"rom-r{r}-L{size}.somx"))
            rom_system = rom.to_system(
                initial_mean=v_r.matrix.T @ fom.initial_mean,
                initial_covariance=v_r.matrix.T @ fom.initial_covariance @ v_r.matrix,
            )
            m = rom_moments(rom_system, f"test-opinf-r{r}-L{size}")
            e_mean, e_cov = relative_errors(fom_test, m, v_r.matrix)
            e1, e2 = weak_errors(fom_test, m, v_r.matrix)
            tables["e_mean"][(r, label)] = e_mean
            tables["e_cov"][(r, label)] = e_cov
            tables["e_phi1"][(r, label)] = e1
            tables["e_phi2"][(r, label)] = e2
            tables["noise_dim"][(r, label)] = rom.noise_dim

    outputs = []
    for metric in ("e_mean", "e_cov", "e_phi1", "e_phi2", "noise_dim"):
        name = f"{metric}.csv"
        _write_metric_csv(out_dir / name, tables[metric], cfg.reduced_dims, series)
        outputs.append(name)

    subspace_ens = _ensemble_from_container(_require(data_dir / "subspace.somx"))
    snr = snr_sequence(empirical_moments(subspace_ens))
    with open(out_dir / "snr.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "snr"])
        for t, value in zip(grid.times, snr):
            writer.writerow([repr(float(t)), "NA" if not np.isfinite(value) else repr(float(value))])
    outputs.append("snr.csv")

    with open(out_dir / "plot-data.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "series", "r", "value"])
        for metric in ("e_mean", "e_cov", "e_phi1", "e_phi2"):
            for r in cfg.reduced_dims:
                for label in series:
                    writer.writerow([metric, label, r, _format_cell(tables[metric].get((r, label)))])
    outputs.append("plot-data.csv")

    write_manifest(
        out_dir, "manifest-evaluate.json", cfg, [{"name": "evaluate", "outputs": outputs}]
    )
    return EXIT_OK


def cmd_report(data_dir):
    data_dir = Path(data_dir)
    printed = False
    for metric in ("e_mean", "e_cov", "e_phi1", "e_phi2", "noise_dim"):
        path = data_dir / f"{metric}.csv"
        if not path.exists():
            continue
        printed = True
        print(f"== {metric} ==")
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                print("  ".join(f"{cell:>14}" for cell in row))
        print()
    if not printed:
        raise MissingArtifactError(f"no metric tables found in {data_dir}")
    return EXIT_OK


# Entry point =================================================================

def _threads_context(threads):
    if threads is None:
        import contextlib

        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - threadpoolctl ships with sklearn
        import contextlib

        return contextlib.nullcontext()
    return threadpool_limits(limits=threads)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stochrom",
        description="Reduced-order modelling of bilinear SDEs from state observations",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_data, needs_out in (
        ("simulate", False, True),
        ("infer", True, True),
        ("evaluate", True, True),
    ):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="INI config file")
        cmd.add_argument("--out", required=True, help="output directory")
        if needs_data:
            cmd.add_argument("--data", required=True, help="input artifact directory")
        cmd.add_argument("--seed", type=int, default=None, help="override the config seed")
        cmd.add_argument("--threads", type=int, default=None, help="thread-pool limit")
        cmd.add_argument(
            "--mode", choices=("oracle", "montecarlo"), default=None,
            help="override the evaluation mode",
        )
    report = sub.add_parser("report")
    report.add_argument("--data", required=True, help="directory with metric CSVs")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.data)
        cfg = load_config(args.config, seed_override=args.seed, mode_override=args.mode)
        with _threads_context(args.threads):
            if args.command == "simulate":
                return cmd_simulate(cfg, args.out)
            if args.command == "infer":
                return cmd_infer(cfg, args.data, args.out)
            if args.command == "evaluate":
                return cmd_evaluate(cfg, args.data, args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
