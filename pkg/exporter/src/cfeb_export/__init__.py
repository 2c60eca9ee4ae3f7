"""Offline exporter: images + concept lists -> CFEB dataset + manifest."""

from .errors import BackboneUnavailableError, ExportError, ImageReadError, JobError
from .export import ExportResult, export
from .job import ExportJob, ImageItem, load_job

__all__ = [
    "BackboneUnavailableError",
    "ExportError",
    "ExportJob",
    "ExportResult",
    "ImageItem",
    "ImageReadError",
    "JobError",
    "export",
    "load_job",
]
