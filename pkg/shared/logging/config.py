"""
Shared logging configuration for the patch-engine monorepo.
Provides both development and production logging setups.

Engine modules log through structlog (``structlog.get_logger(__name__)``);
the processors configured here route those events into the stdlib
handlers, so one setup call governs every module.
"""

import logging
import sys
from typing import List, Optional

import structlog


class LoggingConfig:
    """Centralized logging configuration for all services."""

    @staticmethod
    def _shared_processors() -> List:
        return [
            structlog.contextvars.merge_contextvars,
            structlog.stdlib.add_log_level,
            structlog.stdlib.add_logger_name,
            structlog.processors.TimeStamper(fmt="%Y-%m-%d %H:%M:%S"),
        ]

    @staticmethod
    def setup_logging(
        service_name: str,
        log_level: str = "INFO",
        environment: str = "development",
        log_file: Optional[str] = None
    ) -> logging.Logger:
        """
        Set up logging for a service.

        Args:
            service_name: Name of the service (e.g., 'patch-engine')
            log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
            environment: Environment (development, production)
            log_file: Optional log file path

        Returns:
            Configured logger instance
        """
        level = getattr(logging, log_level.upper())
        shared = LoggingConfig._shared_processors()

        if environment == "development":
            # Development logging with detailed formatting
            renderer = structlog.dev.ConsoleRenderer(colors=False)
        else:
            # Production logging with JSON formatting
            shared.append(structlog.processors.dict_tracebacks)
            renderer = structlog.processors.JSONRenderer()

        structlog.configure(
            processors=shared + [structlog.stdlib.ProcessorFormatter.wrap_for_formatter],
            logger_factory=structlog.stdlib.LoggerFactory(),
            wrapper_class=structlog.stdlib.BoundLogger,
            cache_logger_on_first_use=False,
        )

        formatter = structlog.stdlib.ProcessorFormatter(
            foreign_pre_chain=shared,
            processors=[
                structlog.stdlib.ProcessorFormatter.remove_processors_meta,
                _ServiceTagger(service_name),
                renderer,
            ],
        )

        # Engine modules live under the ``app`` package; the service logger
        # and the package logger share the same handlers.
        root = logging.getLogger()
        root.setLevel(level)
        root.handlers.clear()

        # stderr keeps stdout free for command output
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(level)
        console_handler.setFormatter(formatter)
        root.addHandler(console_handler)

        # Add file handler if specified
        if log_file:
            file_handler = logging.FileHandler(log_file)
            file_handler.setLevel(level)
            file_handler.setFormatter(formatter)
            root.addHandler(file_handler)

        logger = logging.getLogger(service_name)
        logger.setLevel(level)
        return logger

    @staticmethod
    def get_logger(service_name: str) -> logging.Logger:
        """Get an existing logger for a service."""
        return logging.getLogger(service_name)


class _ServiceTagger:
    """Stamp every event with the service name."""

    def __init__(self, service_name: str):
        self.service_name = service_name

    def __call__(self, logger, method_name, event_dict):
        event_dict.setdefault("service", self.service_name)
        return event_dict


def setup_service_logging(
    service_name: str,
    environment: str = "development",
    log_level: Optional[str] = None,
    log_file: Optional[str] = None,
) -> logging.Logger:
    """
    Convenience function to set up logging for a service.

    Args:
        service_name: Name of the service
        environment: Environment (development, production)
        log_level: Explicit level; defaults by environment
        log_file: Optional log file path

    Returns:
        Configured logger instance
    """
    if log_level is None:
        log_level = "DEBUG" if environment == "development" else "INFO"
    return LoggingConfig.setup_logging(
        service_name=service_name,
        log_level=log_level,
        environment=environment,
        log_file=log_file,
    )
