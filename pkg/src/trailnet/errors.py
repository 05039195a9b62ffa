"""Exception hierarchy shared by all subsystems.

The CLI maps these onto exit codes: usage/configuration problems exit 1,
bad inputs and malformed files exit 2, runtime and network failures exit 3.
"""


class TrailnetError(Exception):
    exit_code = 3


class ConfigurationError(TrailnetError, ValueError):
    exit_code = 1


class InputError(TrailnetError, ValueError):
    exit_code = 2


class FormatError(InputError):
    pass


class StateError(TrailnetError, RuntimeError):
    exit_code = 3


class TrainingDiverged(StateError):
    pass


class NetworkError(TrailnetError, OSError):
    exit_code = 3


class ProtocolError(FormatError):
    """A datagram that fails validation; `reason` is the rejection bucket."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class ReplyTimeout(NetworkError, TimeoutError):
    pass
