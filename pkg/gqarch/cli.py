"""Command-line entrypoint: simulate, estimate, mc, diagnose, feasibility.

Each command is driven by a flat ``key = value`` configuration. Values come
from an optional ``--config`` file, overridden by ``--key`` flags; the fully
resolved configuration is echoed as a ``# key = value`` block at the top of
every output; parse_config_echo turns that block back into the RunConfig.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, ValidationError

from gqarch import __version__
from gqarch.env_config import DEFAULT_K4, GqarchConfig, load_config
from gqarch.exceptions import EXIT_DATA, EXIT_OK, EXIT_USAGE, ConfigError, GqarchError, NonPositiveAcfError, SingularInformationError
from gqarch.inference import InfoMatrices, info_matrices
from gqarch.likelihood import PastMode
from gqarch.logging_config import configure_logging
from gqarch.montecarlo import (
    McDesign,
    McReport,
    acf_squares,
    compare_to_reference,
    memory_slope_from_acf,
    quick_design,
    reference_theta,
    reference_design,
    render_table,
    run_mc,
    write_results_csv,
)
from gqarch.observability.metrics import write_metrics
from gqarch.optimizer import EstimateResult, OptimOptions, estimate
from gqarch.params import PARAM_NAMES, ParamBox, Theta, check_feasibility, stationary_variance
from gqarch.simulator import SimConfig, format_number, load_series, simulate, write_series

logger = structlog.get_logger(__name__)

Command = Literal["simulate", "estimate", "mc", "diagnose", "feasibility"]
COMMANDS: Tuple[str, ...] = ("simulate", "estimate", "mc", "diagnose", "feasibility")
MC_DESIGNS = ("quick", "reference", "single")

REQUIRED = object()


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in {"1", "true", "yes", "on"}:
        return True
    if value in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> Tuple[int, ...]:
    items = tuple(int(part) for part in text.split(",") if part.strip())
    if not items:
        raise ValueError("empty list")
    return items


KeySpec = Tuple[Callable[[str], Any], Any]

_THETA_KEYS: Dict[str, KeySpec] = {name: (float, REQUIRED) for name in PARAM_NAMES}
_BOX_KEYS: Dict[str, KeySpec] = {key: (float, value) for key, value in ParamBox().to_config().items()}
_OPTIM_KEYS: Dict[str, KeySpec] = {
    "starts": (int, 5),
    "max_iters": (int, 2000),
    "f_tol": (float, 1e-9),
    "x_tol": (float, 1e-7),
    "use_gradient": (_bool, True),
    **_BOX_KEYS,
}

COMMAND_KEYS: Dict[str, Dict[str, KeySpec]] = {
    "simulate": {
        **_THETA_KEYS,
        "n": (int, REQUIRED),
        "seed": (int, 0),
        "innovation": (str, "normal"),
        "nu": (float, None),
        "presample": (_bool, False),
        "force": (_bool, False),
        "out": (str, REQUIRED),
    },
    "estimate": {
        "in": (str, REQUIRED),
        "out": (str, None),
        "mode": (str, "finite-past"),
        "beta": (float, None),
        "seed": (int, 0),
        **_OPTIM_KEYS,
    },
    "mc": {
        "design": (str, "quick"),
        **{name: (float, getattr(reference_theta(0.1, 0.2), name)) for name in PARAM_NAMES},
        "n_list": (_int_list, (1000, 5000)),
        "reps": (int, 100),
        "mode": (str, "presample"),
        "beta": (float, None),
        "seed": (int, 0),
        "innovation": (str, "normal"),
        "nu": (float, None),
        "workers": (int, 1),
        "out": (str, REQUIRED),
        **_OPTIM_KEYS,
    },
    "diagnose": {
        "in": (str, REQUIRED),
        "out": (str, REQUIRED),
        "max_lag": (int, 100),
        "lag_lo": (int, 10),
        "lag_hi": (int, None),
    },
    "feasibility": {
        "gamma": (float, REQUIRED),
        "d": (float, REQUIRED),
        "c": (float, REQUIRED),
        "omega": (float, 0.0),
        "a": (float, 0.0),
        "mu4": (float, 3.0),
        "k4": (float, DEFAULT_K4),
    },
}

# defaults taken from the environment when a GqarchConfig is supplied
_ENV_DEFAULTS = {"workers": "workers", "mu4": "mu4", "k4": "k4"}


class RunConfig(BaseModel):
    """Resolved configuration of one command invocation."""

    model_config = ConfigDict(frozen=True)

    command: Command
    parameters: Dict[str, Any]
    input_path: Optional[str] = None
    output_path: Optional[str] = None
    seed: int = 0

    def get(self, key: str) -> Any:
        return self.parameters.get(key)

    def echo(self, digits: int = 17) -> Dict[str, str]:
        lines = {"command": self.command}
        lines.update({key: _render(value, digits) for key, value in self.parameters.items()})
        return lines


def _render(value: Any, digits: int = 17) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_number(value, digits)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def resolve_config(command: str, values: Mapping[str, str], env: Optional[GqarchConfig] = None) -> RunConfig:
    """Type-check ``values`` against the keys of ``command`` and fill defaults."""
    if command not in COMMAND_KEYS:
        raise ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}", key="command")
    known = COMMAND_KEYS[command]
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) for {command}: {', '.join(unknown)}", key=unknown[0])

    parameters: Dict[str, Any] = {}
    for key, (convert, default) in known.items():
        raw = values.get(key)
        if raw is None or str(raw).strip() == "":
            if default is REQUIRED:
                raise ConfigError(f"{command} requires {key!r}", key=key)
            if env is not None and key in _ENV_DEFAULTS:
                default = getattr(env, _ENV_DEFAULTS[key])
            if default is not None:
                parameters[key] = default
            continue
        try:
            parameters[key] = convert(str(raw).strip())
        except ValueError as exc:
            raise ConfigError(f"invalid value for {key!r}: {raw!r} ({exc})", key=key)

    return RunConfig(
        command=command,
        parameters=parameters,
        input_path=parameters.get("in"),
        output_path=parameters.get("out"),
        seed=parameters.get("seed", 0),
    )


def read_config_file(path: str | Path, command: Optional[str] = None) -> Dict[str, str]:
    """Flat ``key = value`` file with ``#`` comments; a ``command`` line must match."""
    values: Dict[str, str] = {}
    for line_no, raw_line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "command":
            if command is not None and value != command:
                raise ConfigError(f"{path}: config is for {value!r}, not {command!r}", key="command")
            continue
        values[key] = value
    return values


def parse_config_echo(text: str) -> RunConfig:
    """Rebuild the RunConfig from the leading ``# key = value`` block of an output."""
    values: Dict[str, str] = {}
    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line.startswith("#"):
            break
        body = line.lstrip("#").strip()
        if "=" in body:
            key, value = (part.strip() for part in body.split("=", 1))
            values[key] = value
    command = values.pop("command", None)
    if command is None:
        raise ConfigError("no 'command' line in the config echo", key="command")
    return resolve_config(command, values)


def _echo_lines(config: RunConfig, digits: int) -> List[str]:
    return [f"# {key} = {value}" for key, value in config.echo(digits).items()]


def _past_mode(config: RunConfig) -> PastMode:
    return PastMode.parse(config.get("mode"), config.get("beta"))


def _optim_options(config: RunConfig) -> OptimOptions:
    return OptimOptions(
        box=ParamBox.from_config(config.parameters),
        starts=config.get("starts"),
        max_iters=config.get("max_iters"),
        f_tol=config.get("f_tol"),
        x_tol=config.get("x_tol"),
        use_gradient=config.get("use_gradient"),
        seed=config.seed,
    )


def _theta(config: RunConfig) -> Theta:
    return Theta(**{name: config.get(name) for name in PARAM_NAMES})


def _run_simulate(config: RunConfig, env: GqarchConfig) -> int:
    cfg = SimConfig(
        n=config.get("n"),
        seed=config.seed,
        innovation=config.get("innovation"),
        nu=config.get("nu"),
        presample=config.get("presample"),
    )
    series = simulate(_theta(config), cfg, force=config.get("force"))
    write_series(config.output_path, series, metadata=config.echo(env.format_digits), digits=env.format_digits)
    logger.info("cli.simulate.written", path=config.output_path, n=series.n)
    return EXIT_OK


def _estimate_row(result: EstimateResult, info: Optional[InfoMatrices], seed: int) -> Dict[str, Any]:
    row: Dict[str, Any] = dict(zip(PARAM_NAMES, result.theta_hat.as_array()))
    se = info.se if info is not None and info.se is not None else np.full(5, np.nan)
    row.update({f"se_{name}": value for name, value in zip(PARAM_NAMES, se)})
    row.update(
        {
            "objective": result.objective,
            "mode": result.mode.label,
            "converged": result.converged,
            "iterations": result.iterations,
            "starts_used": result.starts_used,
            "floor_activated": result.floor_activated,
        }
    )
    row.update({f"at_boundary_{name}": flag for name, flag in zip(PARAM_NAMES, result.at_boundary)})
    row["kappa4"] = info.kappa4_hat if info is not None else np.nan
    row["condition_number"] = info.condition_number if info is not None else np.nan
    row["seed"] = seed
    return row


def _matrix_lines(title: str, matrix: Optional[np.ndarray]) -> List[str]:
    if matrix is None:
        return [f"{title}: unavailable"]
    lines = [f"{title}:", "  " + " ".join(f"{name:>12}" for name in PARAM_NAMES)]
    lines.extend("  " + " ".join(f"{v:12.5g}" for v in row) for row in matrix)
    return lines


def render_estimate_report(result: EstimateResult, info: Optional[InfoMatrices], n: int) -> str:
    lines = [f"QML estimate ({result.mode.label}, n = {n})", ""]
    se = info.se if info is not None and info.se is not None else None
    lines.append(f"{'param':>6} {'estimate':>14} {'std.err':>12} {'boundary':>9}")
    for i, name in enumerate(PARAM_NAMES):
        se_text = f"{se[i]:12.5g}" if se is not None else f"{'n/a':>12}"
        flag = "yes" if result.at_boundary[i] else ""
        lines.append(f"{name:>6} {result.theta_hat.as_array()[i]:14.6g} {se_text} {flag:>9}")
    lines.append("")
    lines.append(f"objective        = {format_number(result.objective)}")
    lines.append(f"converged        = {str(result.converged).lower()}")
    lines.append(f"iterations       = {result.iterations}")
    lines.append(f"starts used      = {result.starts_used}")
    lines.append(f"floor activated  = {str(result.floor_activated).lower()}")
    if info is not None:
        lines.append(f"kappa4           = {info.kappa4_hat:.6g}")
        lines.append(f"cond(B)          = {info.condition_number:.3g}")
        lines.append("")
        lines.extend(_matrix_lines("B", info.b_hat))
        lines.extend(_matrix_lines("A", info.a_hat))
        lines.extend(_matrix_lines("Sigma", info.sigma_hat))
    for message in result.warnings:
        lines.append(f"warning: {message}")
    return "\n".join(lines) + "\n"


def _run_estimate(config: RunConfig, env: GqarchConfig) -> int:
    series = load_series(config.input_path)
    result = estimate(series, _past_mode(config), _optim_options(config))
    info: Optional[InfoMatrices]
    try:
        info = info_matrices(result.theta_hat, series, result.mode)
    except SingularInformationError as exc:
        logger.warning("cli.estimate.no_standard_errors", condition_number=exc.condition_number)
        info = exc.info
    report = render_estimate_report(result, info, series.n)
    echo = "\n".join(_echo_lines(config, env.format_digits)) + "\n"
    sys.stdout.write(report)
    if config.output_path:
        out = Path(config.output_path)
        with open(out, "w", encoding="utf-8", newline="") as handle:
            handle.write(echo)
            pd.DataFrame([_estimate_row(result, info, config.seed)]).to_csv(handle, index=False, float_format="%.17g")
        out.with_suffix(".report.txt").write_text(echo + report, encoding="utf-8")
        logger.info("cli.estimate.written", path=str(out))
    return EXIT_OK


def _mc_design(config: RunConfig) -> McDesign:
    design = config.get("design")
    mode = _past_mode(config)
    opts = _optim_options(config)
    innovation = {"innovation": config.get("innovation"), "nu": config.get("nu")}
    if design == "quick":
        base = quick_design(seed=config.seed)
        return McDesign(**{**dict(base), "mode": mode, "opts": opts, **innovation})
    if design == "reference":
        base = reference_design(n_list=config.get("n_list"), reps=config.get("reps"), seed=config.seed, mode=mode, opts=opts)
        return McDesign(**{**dict(base), **innovation})
    if design == "single":
        return McDesign(
            theta_grid=(_theta(config),),
            n_list=config.get("n_list"),
            reps=config.get("reps"),
            mode=mode,
            seed=config.seed,
            opts=opts,
            innovation=config.get("innovation"),
            nu=config.get("nu"),
        )
    raise ConfigError(f"unknown design {design!r}; expected one of {', '.join(MC_DESIGNS)}", key="design")


def _effective_config(config: RunConfig, design: McDesign) -> RunConfig:
    """Config as actually run: quick and reference designs fix their own grid."""
    parameters = dict(config.parameters)
    parameters["reps"] = design.reps
    parameters["n_list"] = tuple(design.n_list)
    if len(design.theta_grid) == 1:
        parameters.update(design.theta_grid[0].model_dump())
    else:
        for name in PARAM_NAMES:
            parameters.pop(name, None)
    return config.model_copy(update={"parameters": parameters})


def _reference_lines(report: McReport) -> List[str]:
    lines = []
    for item in compare_to_reference(report):
        if item.ratio is None:
            continue
        ratios = " ".join(f"{v:8.2f}" for v in item.ratio)
        lines.append(f"{item.cell.n:>6} {item.cell.theta0.omega:7g} {item.cell.theta0.d:5.2f} {ratios}")
    if not lines:
        return []
    return ["RMSE relative to the reference table (n, omega0, d0, gamma..c)"] + lines


def _run_mc(config: RunConfig, env: GqarchConfig) -> int:
    design = _mc_design(config)
    config = _effective_config(config, design)
    report = run_mc(design, workers=config.get("workers"))
    echo = config.echo(env.format_digits)
    write_results_csv(config.output_path, report, metadata=echo)
    table = render_table(report)
    extra = _reference_lines(report)
    if extra:
        table += "\n" + "\n".join(extra) + "\n"
    table_path = Path(config.output_path).with_suffix(".table.txt")
    table_path.write_text("\n".join(_echo_lines(config, env.format_digits)) + "\n" + table, encoding="utf-8")
    sys.stdout.write(table)
    logger.info("cli.mc.written", path=config.output_path, table=str(table_path), wall_time=round(report.wall_time, 3))
    return EXIT_OK


def _run_diagnose(config: RunConfig, env: GqarchConfig) -> int:
    series = load_series(config.input_path)
    max_lag = config.get("max_lag")
    acov = acf_squares(series, max_lag)
    lag_hi = config.get("lag_hi") or max_lag
    trailer: List[str] = []
    failure: Optional[NonPositiveAcfError] = None
    try:
        slope = memory_slope_from_acf(acov, config.get("lag_lo"), lag_hi)
        trailer = [f"# slope = {format_number(slope.slope)}", f"# d_implied = {format_number(slope.d_implied)}"]
    except NonPositiveAcfError as exc:
        failure = exc
    with open(config.output_path, "w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(_echo_lines(config, env.format_digits)) + "\n")
        frame = pd.DataFrame({"lag": np.arange(acov.size), "acov": acov})
        frame.to_csv(handle, index=False, float_format="%.17g")
        if trailer:
            handle.write("\n".join(trailer) + "\n")
    if failure is not None:
        raise failure
    logger.info("cli.diagnose.written", path=config.output_path, slope=slope.slope, d_implied=slope.d_implied)
    return EXIT_OK


def render_feasibility(config: RunConfig) -> str:
    theta = Theta(
        gamma=config.get("gamma"),
        omega=config.get("omega"),
        a=config.get("a"),
        d=config.get("d"),
        c=config.get("c"),
    )
    report = check_feasibility(theta, mu4=config.get("mu4"), k4=config.get("k4"))
    lines = [
        f"b2 = {format_number(report.b2, 6)}",
        f"l2_ok = {str(report.l2_ok).lower()}",
        f"l4_ok = {str(report.l4_ok).lower()}",
        f"slack_l2 = {format_number(report.slack_l2, 6)}",
        f"slack_l4 = {format_number(report.slack_l4, 6)}",
    ]
    if report.l2_ok and (theta.omega or theta.a):
        lines.append(f"stationary_variance = {format_number(stationary_variance(theta), 6)}")
    return "\n".join(lines) + "\n"


def _run_feasibility(config: RunConfig, env: GqarchConfig) -> int:
    sys.stdout.write("\n".join(_echo_lines(config, env.format_digits)) + "\n")
    sys.stdout.write(render_feasibility(config))
    return EXIT_OK


_HANDLERS: Dict[str, Callable[[RunConfig, GqarchConfig], int]] = {
    "simulate": _run_simulate,
    "estimate": _run_estimate,
    "mc": _run_mc,
    "diagnose": _run_diagnose,
    "feasibility": _run_feasibility,
}


def run(config: RunConfig, env: Optional[GqarchConfig] = None) -> int:
    env = env or load_config()
    logger.info("cli.run", command=config.command, seed=config.seed)
    return _HANDLERS[config.command](config, env)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gqarch", description="Long-memory GQARCH simulation and QML estimation.")
    parser.add_argument("--version", action="version", version=f"gqarch {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        sub = subparsers.add_parser(command, allow_abbrev=False)
        sub.add_argument("--config", default=None, help="Flat key = value file; flags override its values")
        for key, (_, default) in COMMAND_KEYS[command].items():
            hint = "required" if default is REQUIRED else f"default {_render(default) if default is not None else 'unset'}"
            sub.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, metavar=key.upper(), help=hint)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        env = load_config()
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    configure_logging(env.log_level)
    args = build_parser().parse_args(argv)
    command = args.command
    code = EXIT_OK
    try:
        values = read_config_file(args.config, command) if args.config else {}
        values.update({key: value for key, value in vars(args).items() if key in COMMAND_KEYS[command] and value is not None})
        code = run(resolve_config(command, values, env), env)
    except GqarchError as exc:
        logger.error("cli.failed", command=command, error=str(exc), exit_code=exc.exit_code)
        print(f"error: {exc}", file=sys.stderr)
        code = exc.exit_code
    except ValidationError as exc:
        logger.error("cli.invalid_arguments", command=command, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except OSError as exc:
        logger.error("cli.io_failed", command=command, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_DATA
    finally:
        if env.metrics_path:
            write_metrics(env.metrics_path)
    return code
