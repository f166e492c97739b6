# Standard library imports

# Third party imports

# Local application imports

EXIT_OK = 0
EXIT_WARNING = 1


class RecommenderError(Exception):
    """
    Base class of every error raised by the package.

    Attributes:
        exit_code (int): The process exit code the CLI reports for this error.
    """
    exit_code = 1


class ConfigurationError(RecommenderError):
    """Invalid settings, mismatched shapes or a model that does not fit its schema."""
    exit_code = 2


class UsageError(ConfigurationError):
    """An operation was called outside its preconditions (empty input, N < L, ...)."""


class DataError(RecommenderError):
    """
    A record or file violates the data model.

    Args:
        msg (str): The message.
        line_number (int, optional): 1-based line of the offending record.
    """
    exit_code = 3

    def __init__(self, msg, line_number=None):
        if line_number is not None:
            msg = "line {}: {}".format(line_number, msg)
        super(DataError, self).__init__(msg)
        self.line_number = line_number


class NumericError(RecommenderError):
    exit_code = 4


class TrainingError(NumericError):
    """
    A non-finite loss or gradient appeared during training.

    Args:
        msg (str): The message.
        parameter (str, optional): Name of the offending parameter.
    """
    def __init__(self, msg, parameter=None):
        if parameter is not None:
            msg = "{} (parameter {})".format(msg, parameter)
        super(TrainingError, self).__init__(msg)
        self.parameter = parameter


class SamplingDomainError(NumericError):
    """A slate has zero probability under the sampling law."""


class UndefinedMetricError(NumericError):
    """A metric is undefined on the given input (e.g. AUC on a single class)."""


class GenerationExhaustedError(RecommenderError):
    """Every sampling round hit a legality dead end."""
    exit_code = 5
