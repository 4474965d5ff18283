from .config import RunConfig
from .main import cmd_adapt, cmd_bench, cmd_eval, cmd_pretrain, cmd_sweep, cmd_synth, main
from .report import read_report, write_report

__all__ = ["RunConfig", "cmd_adapt", "cmd_bench", "cmd_eval", "cmd_pretrain", "cmd_sweep",
           "cmd_synth", "main", "read_report", "write_report"]
