"""Exception types raised across the library."""


class StreamNormError(Exception):
    pass


class ShapeError(StreamNormError, ValueError):
    pass


class ParameterError(StreamNormError, ValueError):
    pass


class ContractError(StreamNormError, ValueError):
    """An operation was called with inputs that break its preconditions."""


class StateError(StreamNormError, RuntimeError):
    pass


class DegeneratePartitionError(StreamNormError, ValueError):
    """Mean-centred statistics requested over singleton groups.

    With the group mean as centre every deviation is zero, so sigma collapses
    to the epsilon floor and the normalized signal is identically zero.
    """


class UninitializedStatsError(StateError):
    pass


class UnseenTimestepError(StateError):
    pass


class FormatError(StreamNormError, ValueError):
    pass


class ConfigError(StreamNormError, ValueError):
    pass


class NumericalError(StreamNormError, FloatingPointError):
    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index
