#!/usr/bin/env python3
"""
Stage-tagged logging.

Every log record gets a ``stage`` attribute describing where in the
continuation / Picard / Newton nesting it was emitted, e.g.
``EPS_1e-03 > PICARD_4 > NEWTON``.
"""

import contextlib
import contextvars
import logging
import os
from typing import Any, Iterator, Tuple

_LOG_STAGE_STACK: contextvars.ContextVar[Tuple[str, ...]] = contextvars.ContextVar(
    "log_stage_stack",
    default=(),
)
_LOG_RECORD_FACTORY = logging.getLogRecordFactory()

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(stage)s - %(message)s'
LOG_LEVEL_ENV = 'NEUMANN_LOG_LEVEL'

STAGE_LABELS = (
    ("INIT", "ConfigAndProblemSetup"),
    ("EPS_x", "ContinuationStage_eps"),
    ("PICARD_n", "FixedPointIteration_n"),
    ("NEWTON", "FrozenCoefficientNewtonSolve"),
    ("COUPLED", "CoupledNewtonOracle"),
    ("MEMBER_j", "StabilityMember_j"),
    ("REPORT", "ReportEmission"),
)


def _format_log_stage() -> str:
    stack = _LOG_STAGE_STACK.get()
    return " > ".join(stack) if stack else "INIT"


def _stage_record_factory(*args: Any, **kwargs: Any) -> logging.LogRecord:
    record = _LOG_RECORD_FACTORY(*args, **kwargs)
    record.stage = _format_log_stage()
    return record


logging.setLogRecordFactory(_stage_record_factory)


@contextlib.contextmanager
def log_stage(stage: str) -> Iterator[None]:
    stack = _LOG_STAGE_STACK.get()
    token = _LOG_STAGE_STACK.set(stack + (stage,))
    try:
        yield
    finally:
        _LOG_STAGE_STACK.reset(token)


def level_from_verbosity(verbosity: int) -> int:
    """
    Map -v counts to a logging level; NEUMANN_LOG_LEVEL wins when set.
    """
    env_level = (os.getenv(LOG_LEVEL_ENV) or '').strip().upper()
    if env_level:
        level = logging.getLevelName(env_level)
        if isinstance(level, int):
            return level
    if verbosity <= 0:
        return logging.WARNING
    if verbosity == 1:
        return logging.INFO
    return logging.DEBUG
