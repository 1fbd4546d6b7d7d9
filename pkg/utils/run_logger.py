import json
import logging
import os
import sys
from datetime import datetime, timezone
from typing import Dict, Any, Optional


class RunLogger:
    """
    Structured run event logging.
    Provides JSON-formatted logs for training runs, data splits and checkpoint audit trails.
    """

    def __init__(self, log_file: Optional[str] = None, log_level: str = "INFO"):
        self.logger = logging.getLogger('mamapp')
        self.command: Optional[str] = None

        # Suppress logging during tests
        if os.getenv('TESTING'):
            self.logger.setLevel(logging.CRITICAL)
        else:
            self.logger.setLevel(getattr(logging, log_level.upper(), logging.INFO))

        # Clear existing handlers to avoid duplicates
        self.logger.handlers.clear()
        self.logger.propagate = False

        # Console handler goes to stderr so command output on stdout stays clean
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(logging.INFO)

        if log_file:
            file_handler = logging.FileHandler(log_file)
            file_handler.setLevel(getattr(logging, log_level.upper(), logging.INFO))
            self.logger.addHandler(file_handler)

        self.logger.addHandler(console_handler)

        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )

        for handler in self.logger.handlers:
            handler.setFormatter(formatter)

    def _get_run_context(self) -> Dict[str, Any]:
        """Context attached to every event."""
        return {
            'timestamp': datetime.now(timezone.utc).isoformat(),
            'pid': os.getpid(),
            'command': self.command,
        }

    def log_event(self, event_type: str, details: Optional[Dict[str, Any]] = None, level: str = "INFO"):
        """
        Log a run event with structured data.

        Args:
            event_type: Type of event (e.g., 'epoch_end', 'checkpoint_save')
            details: Additional event-specific details
            level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        """
        log_data = {
            'event_type': event_type,
            'context': self._get_run_context(),
            'details': details or {}
        }

        log_message = json.dumps(log_data, default=str)

        log_level = getattr(logging, level.upper(), logging.INFO)
        self.logger.log(log_level, log_message)

    def log_command(self, command: str, arguments: Dict[str, Any]):
        """Log the start of a CLI command."""
        self.command = command
        self.log_event('command_start', {'arguments': arguments})

    def log_split(self, dataset: str, counts: Dict[str, Dict[str, int]], seed: int):
        """Log per-class split counts."""
        self.log_event('dataset_split', {'dataset': dataset, 'counts': counts, 'seed': seed})

    def log_skipped_file(self, path: str, reason: str):
        """Log an image skipped during indexing."""
        self.log_event('file_skipped', {'path': path, 'reason': reason}, "WARNING")

    def log_epoch(self, epoch: int, train_loss: float, val_loss: float, val_acc: float, seconds: float):
        """Log the end of a training epoch."""
        details = {
            'epoch': epoch,
            'train_loss': train_loss,
            'val_loss': val_loss,
            'val_acc': val_acc,
            'seconds': round(seconds, 3),
        }
        self.log_event('epoch_end', details)

    def log_checkpoint(self, path: str, kind: str, epoch: Optional[int] = None):
        """Log a checkpoint save or load."""
        self.log_event(f'checkpoint_{kind}', {'path': path, 'epoch': epoch})

    def log_numeric_failure(self, reason: str, epoch: Optional[int] = None, batch: Optional[int] = None):
        """Log a numeric failure that aborts a run."""
        details = {
            'reason': reason,
            'epoch': epoch,
            'batch': batch
        }
        self.log_event('numeric_failure', details, "ERROR")


def get_run_logger() -> RunLogger:
    """Get or create run logger instance."""
    if not hasattr(get_run_logger, '_instance'):
        log_file = os.getenv('LOG_FILE') if os.getenv('ENABLE_RUN_LOGGING', 'false').lower() == 'true' else None
        log_level = os.getenv('LOG_LEVEL', 'INFO')
        get_run_logger._instance = RunLogger(log_file, log_level)

    return get_run_logger._instance
