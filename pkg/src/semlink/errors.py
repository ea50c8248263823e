"""Error taxonomy shared across modules.

The CLI maps these onto exit codes: usage errors -> 1, invariant/self-test
failures -> 2, I/O and protocol errors -> 3.
"""


class SemlinkError(Exception):
    pass


class DimensionError(SemlinkError):
    """Shape mismatch; message carries the offending shapes."""


class ContractError(SemlinkError):
    """A documented precondition was violated by the caller."""


class InputError(SemlinkError):
    """Invalid user-supplied value (config, dataset, CLI argument)."""


class ProtocolError(SemlinkError):
    """Symbol-stream bookkeeping inconsistent with side information."""


class CheckpointError(SemlinkError):
    """Checkpoint container malformed or inconsistent with the model."""


class ConfigError(InputError):
    """Malformed or unknown configuration content."""
