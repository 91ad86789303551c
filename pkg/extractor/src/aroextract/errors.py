class ExtractorError(Exception):
    """Base; exit_code feeds the CLI."""

    exit_code = 1


class UsageError(ExtractorError):
    """Bad flags, unknown model scheme, unloadable model."""

    exit_code = 1


class ManifestError(ExtractorError):
    """Malformed or inconsistent manifest / data files."""

    exit_code = 2
