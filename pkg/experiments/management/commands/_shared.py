"""Helpers shared by the experiments management commands."""
from pathlib import Path

from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management.base import CommandError

from experiments.config import ExperimentSpec, parse_config
from experiments.traces import ingest_traces
from simulator.traces import TraceSet


def validation_failure(exc: ValidationError, source: str) -> CommandError:
    details = "\n  ".join(exc.messages)
    return CommandError(f"{source} is invalid:\n  {details}")


def read_document(path: str) -> str:
    try:
        return Path(path).read_text(encoding='utf-8')
    except OSError as exc:
        raise CommandError(f"Cannot read {path}: {exc}") from exc


def load_spec(path: str) -> ExperimentSpec:
    """Parse the document at ``path`` and apply FASTSYNC_SEED when it is set."""
    try:
        spec = parse_config(read_document(path))
    except ValidationError as exc:
        raise validation_failure(exc, path) from exc
    if settings.FASTSYNC_SEED is not None:
        spec = spec.with_seed(settings.FASTSYNC_SEED)
    return spec


def load_traces(path: str) -> TraceSet:
    try:
        return ingest_traces(path)
    except ValidationError as exc:
        raise validation_failure(exc, path) from exc
    except OSError as exc:
        raise CommandError(f"Cannot read {path}: {exc}") from exc
