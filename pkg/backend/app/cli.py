"""
epflow batch front-end.

    epflow <command> --config <path> [--out <dir>] [--seed <u64>] [--threads <n>]

The configuration is sectioned key/value text: a [model] section, an
optional [run] section and at most one parameter section named after the
command. Flags override [run] keys; EPFLOW_THREADS is the fallback thread
count. Exit codes: 0 success, 1 configuration error, 2 numerical guard.
"""

import argparse
import configparser
import sys
import time
from pathlib import Path
from typing import Dict, Optional, Sequence

from pydantic import ValidationError

from app.commands import CommandContext, get_handler
from app.config import settings
from app.schemas import PARAMS_BY_COMMAND, CommandName, ModelSection, RunConfig, RunSection
from core.errors import ConfigError, EpflowError, NumericalGuardError
from utils.logging import get_logger, log_exception, setup_logging

logger = get_logger(__name__)

COMMAND_SECTIONS = {c.value for c in CommandName}


class ParseError(ConfigError):
    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


class ConfigValidationError(ConfigError):
    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


def _read_sections(text: str, source: str) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#", ";;"))
    parser.optionxform = str  # keep matrix keys such as C and Bm
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateSectionError as e:
        raise ConfigValidationError(f"duplicate section at line {e.lineno}", key=e.section) from e
    except configparser.DuplicateOptionError as e:
        raise ConfigValidationError(f"duplicate key in [{e.section}] at line {e.lineno}", key=e.option) from e
    except configparser.MissingSectionHeaderError as e:
        raise ParseError("key/value text before any [section] header", e.lineno) from e
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else None
        raise ParseError("malformed line", lineno) from e
    return {name: dict(parser.items(name)) for name in parser.sections()}


def _validate(section: str, schema, data: Dict[str, str]):
    try:
        return schema(**data)
    except ValidationError as e:
        error = e.errors()[0]
        key = ".".join(str(part) for part in error.get("loc", ())) or None
        if error.get("type") == "extra_forbidden":
            raise ConfigValidationError(f"unknown key in [{section}]", key=key) from e
        raise ConfigValidationError(f"{error.get('msg')} in [{section}]", key=key) from e
    except ConfigError as e:
        raise ConfigValidationError(str(e), key=section) from e


def parse_config(path, command: Optional[str] = None) -> RunConfig:
    """
    Read and validate a run configuration.

    Args:
        path: Configuration file
        command: Command given on the command line (must agree with [run] command)

    Returns:
        RunConfig with every default filled in
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read configuration {path}: {e}") from e
    sections = _read_sections(text, str(path))

    unknown = set(sections) - COMMAND_SECTIONS - {"model", "run"}
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigValidationError("unknown section", key=name)
    present = sorted(set(sections) & COMMAND_SECTIONS)
    if len(present) > 1:
        raise ConfigValidationError(f"more than one command section: {', '.join(present)}", key=present[1])

    run = _validate("run", RunSection, sections.get("run", {}))
    chosen = {c for c in (command, run.command.value if run.command else None) if c}
    if present:
        chosen.add(present[0])
    if len(chosen) != 1:
        detail = "no command given" if not chosen else f"conflicting commands {sorted(chosen)}"
        raise ConfigValidationError(detail, key="command")
    name = CommandName(chosen.pop())

    model = None
    if "model" in sections:
        model = _validate("model", ModelSection, sections["model"])
        try:
            model.build()
        except ConfigError as e:
            raise ConfigValidationError(str(e), key="model") from e
    elif name != CommandName.ADMISSIBLE:
        raise ConfigValidationError("missing [model] section", key="model")

    params = _validate(name.value, PARAMS_BY_COMMAND[name], sections.get(name.value, {}))
    config = RunConfig(model=model, run=run, command=name, params=params)
    for key, value in config.echo().items():
        logger.info(f"config {key} = {value}")
    return config


def resolve_threads(flag: Optional[int], config: RunConfig) -> int:
    if flag is not None:
        return flag
    if config.run.threads is not None:
        return config.run.threads
    return settings.THREADS


def run(config: RunConfig, out: Optional[str] = None, seed: Optional[int] = None,
        threads: Optional[int] = None) -> int:
    """
    Execute a parsed configuration.

    Returns:
        Exit code: 0 on success, 2 on numerical-guard errors, 1 on configuration errors
    """
    out_dir = Path(out or config.run.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        logger.error(f"Output directory {out_dir} is not writable: {e}")
        return ConfigError.exit_code

    ctx = CommandContext(
        config=config,
        out_dir=out_dir,
        seed=config.run.seed if seed is None else seed,
        threads=resolve_threads(threads, config),
    )
    start = time.perf_counter()
    try:
        written = get_handler(config.command)(ctx)
    except NumericalGuardError as e:
        logger.error(f"Numerical guard tripped ({type(e).__name__}): {e}")
        return NumericalGuardError.exit_code
    except (ConfigError, OSError) as e:
        logger.error(f"Configuration error ({type(e).__name__}): {e}")
        return ConfigError.exit_code
    except EpflowError as e:
        log_exception(logger, f"Unexpected failure: {e}")
        return NumericalGuardError.exit_code

    for written_path in written:
        print(written_path)
    logger.info(f"{config.command.value} finished in {time.perf_counter() - start:.2f}s, {len(written)} files")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epflow",
        description="Vanishing-noise entropy production rate functions",
    )
    parser.add_argument("command", choices=sorted(COMMAND_SECTIONS), help="Experiment to run")
    parser.add_argument("--config", required=True, help="Sectioned configuration file")
    parser.add_argument("--out", help="Output directory (overrides [run] out)")
    parser.add_argument("--seed", type=int, help="Master seed (overrides [run] seed)")
    parser.add_argument("--threads", type=int, help="Worker threads (default: EPFLOW_THREADS or 1)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--log-file", default=None, help="Optional rotating log file")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, args.log_file)

    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        logger.error("--seed must be an unsigned 64-bit integer")
        return ConfigError.exit_code
    if args.threads is not None and args.threads < 1:
        logger.error("--threads must be at least 1")
        return ConfigError.exit_code

    try:
        config = parse_config(args.config, args.command)
    except ConfigError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return ConfigError.exit_code
    return run(config, out=args.out, seed=args.seed, threads=args.threads)


if __name__ == "__main__":
    sys.exit(main())
