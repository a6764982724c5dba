"""Exception taxonomy for the extractor.

ConfigError covers anything wrong before extraction starts (flags, encoder
config, captions file). PairError covers failures while processing a single
pair; the pipeline logs these and keeps going.
"""


class ExtractorError(Exception):
    """Base class for every error this package raises on purpose."""


class ConfigError(ExtractorError):
    """Bad CLI flags, encoder config, or captions file."""


class PairError(ExtractorError):
    """One pair could not be processed; other pairs are unaffected."""


class AudioError(PairError):
    """Audio file unreadable, empty, or silent."""


class TextError(PairError):
    """Caption text unusable (empty or degenerate embedding)."""
