class AgatError(Exception):
    """Base error. `exit_code` is what the CLI returns when this escapes a command."""

    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(AgatError):
    exit_code = 2


class DataError(AgatError):
    exit_code = 3


class TrainingAbort(AgatError):
    exit_code = 1


class AugmentationAborted(TrainingAbort):
    pass


class GraphError(AgatError):
    exit_code = 1


class ShapeError(GraphError):
    pass


class NonFiniteError(GraphError):
    pass
