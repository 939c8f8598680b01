"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage errors exit 1, I/O
failures exit 2, on-disk integrity problems exit 3.
"""


class SeriesearchError(Exception):
    """Base class for all package errors."""

    exit_code = 1
    kind = "usage"


class UsageError(SeriesearchError):
    """Bad arguments, violated preconditions, unsupported configurations."""

    exit_code = 1
    kind = "usage"


class DataFileError(SeriesearchError):
    """I/O failure while reading or writing dataset/index files."""

    exit_code = 2
    kind = "io"


class IntegrityError(SeriesearchError):
    """Persisted state is inconsistent: wrong sizes, bad magic, truncation."""

    exit_code = 3
    kind = "integrity"
