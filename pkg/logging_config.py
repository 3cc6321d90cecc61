"""
Logging configuration for the CLP engine

This module sets up structured JSON logging (one object per line) or a plain
text format for interactive use. Logs go to stderr so CLI tables on stdout
stay machine-readable.
"""

import json
import logging
import sys
from datetime import datetime, timezone
from typing import Optional

from config import config


class StructuredFormatter(logging.Formatter):
    """One JSON object per log record"""

    def format(self, record: logging.LogRecord) -> str:
        log_entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "severity": record.levelname,
            "message": record.getMessage(),
            "logger": record.name,
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
        }

        if record.exc_info:
            log_entry["exception"] = self.formatException(record.exc_info)

        # Run context (seed, learner, ...) passed as extra={"extra_fields": {...}}
        if hasattr(record, "extra_fields"):
            log_entry.update(record.extra_fields)

        return json.dumps(log_entry, ensure_ascii=False, default=str)


def setup_logging(level: Optional[str] = None, fmt: Optional[str] = None) -> logging.Logger:
    """Setup logging configuration"""
    root_logger = logging.getLogger()

    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    console_handler = logging.StreamHandler(sys.stderr)

    if (fmt or config.LOG_FORMAT) == "json":
        formatter = StructuredFormatter()
    else:
        formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    log_level = getattr(logging, (level or config.LOG_LEVEL).upper(), logging.INFO)
    root_logger.setLevel(log_level)

    logging.getLogger("matplotlib").setLevel(logging.WARNING)

    logger = logging.getLogger("clp")
    logger.debug("Logging configured")
    return logger
