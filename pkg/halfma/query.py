from typing import Optional, Sequence

import numpy as np

from halfma.base import BarrierSpec, QuadraticData
from halfma.oracles import barrier_value, poisson_rate, remark_solution


def lab_query(input: str) -> Optional[str]:
    """
    Evaluate a closed-form profile at one point, e.g. ``remark:2,1`` or
    ``barrier:0,2``. Returns None for anything that cannot be answered.
    """
    input = input.strip()
    if not input:
        return None
    commands = input.split(':')
    getter = {
        'remark': lab_query_remark,
        'kernel': lab_query_kernel,
        'barrier': lab_query_barrier,
        'quadratic': lab_query_quadratic,
    }.get(commands[0])
    if not callable(getter) or len(commands) != 2:
        return None
    try:
        point = np.array([float(x) for x in commands[1].split(',')])
    except ValueError:
        return None
    if len(point) not in (2, 3):
        return None
    try:
        return f'{float(getter(point)):.12g}'
    except ValueError:
        return None


def lab_query_remark(point: Sequence[float]) -> float:
    value, _, _ = remark_solution(point, len(point))
    return value


def lab_query_kernel(point: Sequence[float]) -> float:
    return poisson_rate(point, len(point))


def lab_query_barrier(point: Sequence[float]) -> float:
    # the largest admissible exponent for s = 1
    return barrier_value(point, BarrierSpec(1.0, dim=len(point)))


def lab_query_quadratic(point: Sequence[float]) -> float:
    return QuadraticData.identity(len(point)).evaluate(point)
