"""Exception types shared across the toolkit.

The CLI maps these onto its exit-code contract: bad or missing input files
raise InputError (exit 1), failures inside the pipeline raise PipelineError
(exit 2).
"""


class InputError(Exception):
    """Malformed or missing input data (files, headers, sidecars)."""


class PipelineError(ValueError):
    """A computation could not proceed (empty results, degenerate geometry)."""
