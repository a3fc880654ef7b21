"""Exceptions raised by naht.mat.

Everything derives from :class:`NahtMatError` so callers (and the CLI) can
catch the whole family at once. Most classes also derive from the builtin
exception a caller would naturally expect, e.g. ``DimensionError`` is a
``ValueError``.
"""


class NahtMatError(Exception):
    "Base class for every error raised by this package."


class DimensionError(NahtMatError, ValueError):
    "Operand shapes are incompatible."


class DegenerateAttentionError(NahtMatError, ValueError):
    "A query row of an attention mask has no key it may attend to."


class NonScalarRootError(NahtMatError, ValueError):
    "backward() was called on a node holding more than one element."


class EnvError(NahtMatError):
    "Invalid interaction with an environment."


class ActionOutOfRangeError(EnvError, ValueError):
    pass


class EpisodeDoneError(EnvError, RuntimeError):
    pass


class ObservationMismatchError(NahtMatError, ValueError):
    "An observation does not have the length its consumer expects."


class OracleBudgetExceeded(NahtMatError, RuntimeError):
    "Exhaustive oracle search would evaluate more branches than allowed."


class ConfigError(NahtMatError, ValueError):
    "An experiment configuration failed validation."


class CheckpointError(NahtMatError, IOError):
    "A checkpoint file is missing, unreadable, or of the wrong format."


class NonFiniteLossError(NahtMatError, FloatingPointError):
    """
    The training loss became NaN or infinite.

    Parameters
    ----------
    message : str
    diagnostics : dict
        JSON-serializable snapshot of the update that failed.
    """
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class GAEMismatchError(NahtMatError, AssertionError):
    "Recursive GAE disagrees with the direct-sum definition."
