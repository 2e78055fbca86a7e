import datetime
import logging
import math
import shutil
from typing import Any, List, Sequence, Tuple

import numpy as np

from halfma.base import ArgumentError
from halfma.const import (ANSI_BROWN, ANSI_GREEN, ANSI_LT_CYAN, ANSI_RED, ANSI_RST,
                          ANSI_YELLOW)


def full_line_banner(msg: str, char='-') -> str:
    """
    Print a full line banner with customizable texts

    :param msg: message you want to be printed
    :param char: character to use to fill the banner
    """
    bars_count = int((shutil.get_terminal_size().columns - len(msg) - 2) / 2)
    bars = char*bars_count
    return ' '.join((bars, msg, bars))


def human_time(full_seconds: float) -> str:
    """
    Convert time span (in seconds) to more friendly format

    :param full_seconds: Time span in seconds (decimal is acceptable)
    """
    out_str_tmp = '{}'.format(
        datetime.timedelta(seconds=full_seconds))
    return out_str_tmp.replace(':', f'{ANSI_GREEN}:{ANSI_RST}')


def format_column(data: Sequence[Tuple[str, ...]]) -> str:
    output = ''
    col_width = max(len(str(word)) for row in data for word in row)
    for row in data:
        output = '%s%s\n' % (
            output, ('\t'.join(str(word).ljust(col_width) for word in row)))
    return output


def print_timings(timings: List[Tuple[str, float]]):
    """
    Print the per-command timings

    :param timings: list of (command, seconds)
    """
    print(full_line_banner('Run Summary'))
    print(format_column([(name, human_time(seconds)) for name, seconds in timings]))


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float, float]:
    """
    Least-squares line through (log x, log y)

    :returns: slope, prefactor exp(intercept) and the largest absolute log residual
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.any(x <= 0) or np.any(y <= 0):
        raise ArgumentError('A log-log fit needs at least two positive samples')
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    residual = float(np.max(np.abs(ly - (slope * lx + intercept))))
    return float(slope), float(math.exp(intercept)), residual


def half_sphere_directions(dim: int, count: int) -> np.ndarray:
    """Unit vectors with positive last component, spread evenly over the upper half sphere."""
    if dim == 2:
        theta = np.pi * (np.arange(count) + 0.5) / count
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    # Fibonacci lattice on the upper hemisphere
    k = np.arange(count) + 0.5
    z = k / count
    phi = np.pi * (1 + 5 ** 0.5) * k
    rho = np.sqrt(1 - z ** 2)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


def to_builtin(data: Any) -> Any:
    """Convert numpy scalars and arrays nested in dicts and lists to plain Python."""
    if isinstance(data, dict):
        return {str(k): to_builtin(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [to_builtin(v) for v in data]
    if isinstance(data, np.ndarray):
        return to_builtin(data.tolist())
    if isinstance(data, np.generic):
        return data.item()
    if isinstance(data, float) and not math.isfinite(data):
        return repr(data)
    return data


class LabLogFormatter(logging.Formatter):
    """
    Level-tagged, colored console formatter
    """

    def format(self, record):
        lvl_map = {
            'WARNING': f'{ANSI_BROWN}WARN{ANSI_RST}',
            'INFO': f'{ANSI_LT_CYAN}INFO{ANSI_RST}',
            'DEBUG': f'{ANSI_GREEN}DEBUG{ANSI_RST}',
            'ERROR': f'{ANSI_RED}ERROR{ANSI_RST}',
            'CRITICAL': f'{ANSI_YELLOW}CRIT{ANSI_RST}'
        }
        if record.levelno in (logging.WARNING, logging.ERROR, logging.CRITICAL,
                              logging.INFO, logging.DEBUG):
            record.msg = f'[{lvl_map[record.levelname]}]: \033[1m{record.msg}\033[0m'
        return super(LabLogFormatter, self).format(record)
