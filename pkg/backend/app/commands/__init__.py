"""
Command handlers for the epflow front-end, one module per command.

Each handler takes a CommandContext and returns the paths it wrote.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List

from app.schemas import CommandName, RunConfig


@dataclass(frozen=True)
class CommandContext:
    config: RunConfig
    out_dir: Path
    seed: int
    threads: int

    @property
    def params(self):
        return self.config.params

    def metadata(self, **extra) -> Dict[str, object]:
        meta: Dict[str, object] = {"command": self.config.command.value, "seed": self.seed}
        meta.update(self.config.echo())
        meta.update(extra)
        return meta


Handler = Callable[[CommandContext], List[Path]]


def get_handler(command: CommandName) -> Handler:
    from app.commands import admissible, mgf_check, rate, simulate, spectrum, sweep

    handlers: Dict[CommandName, Handler] = {
        CommandName.RATE: rate.run,
        CommandName.SPECTRUM: spectrum.run,
        CommandName.SWEEP: sweep.run,
        CommandName.SIMULATE: simulate.run,
        CommandName.MGF_CHECK: mgf_check.run,
        CommandName.ADMISSIBLE: admissible.run,
    }
    return handlers[command]
