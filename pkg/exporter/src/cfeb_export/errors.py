class ExportError(Exception):
    """Any failure that makes the export unusable."""


class JobError(ExportError):
    """The job description itself is invalid."""


class ImageReadError(ExportError):
    """An input image cannot be opened or decoded."""


class BackboneUnavailableError(ExportError):
    """The requested backbone cannot be constructed in this environment."""
