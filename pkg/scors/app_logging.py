import logging
import sys
from typing import Any, Dict, List

import structlog


def _drop_empty_context(_: Any, __: str, event_dict: Dict[str, Any]) -> Dict[str, Any]:
    # Context keys bound as None (e.g. no replicate yet) are noise in the output
    return {key: value for key, value in event_dict.items() if value is not None}


def configure_logging(level: str = "INFO", json: bool = False) -> None:
    """Route structlog through stdlib logging on stderr, JSON or console rendered."""
    numeric_level = getattr(logging, level.upper(), logging.INFO)
    processors: List[Any] = [
        structlog.contextvars.merge_contextvars,
        _drop_empty_context,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.add_log_level,
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
    ]
    if json:
        processors.append(structlog.processors.JSONRenderer())
        fmt = "%(message)s"
    else:
        processors.append(structlog.dev.ConsoleRenderer())
        fmt = "%(levelname)s %(message)s"

    logging.basicConfig(format=fmt, stream=sys.stderr, level=numeric_level, force=True)

    structlog.configure(
        processors=processors,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.make_filtering_bound_logger(numeric_level),
        cache_logger_on_first_use=True,
    )


def bind_experiment_context(**context: Any) -> None:
    """Bind experiment-scoped fields (experiment, seed, method) to every later event."""
    structlog.contextvars.bind_contextvars(**context)


def clear_experiment_context() -> None:
    structlog.contextvars.clear_contextvars()


logger = structlog.get_logger("scors")
