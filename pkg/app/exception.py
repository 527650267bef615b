# app/exception.py


class PatentValuationError(Exception):
    """
    Base class for every error raised by the valuation pipeline.
    """
    pass


class InvalidInputError(PatentValuationError):
    """
    Raised when function parameters or user supplied values are invalid.
    """
    pass


class NotFoundError(PatentValuationError):
    """
    Raised when an expected file, key or stage output is not found.
    """
    pass


class AlreadyExistsError(PatentValuationError):
    """
    Raised when a patent_id appears twice in one corpus.
    """
    pass


class CorpusFormatError(PatentValuationError):
    """
    Raised when a corpus row is malformed and strict parsing is enabled.
    """

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyCorpusError(PatentValuationError):
    """
    Raised when a corpus contains no usable records.
    """
    pass


class IndicatorError(PatentValuationError):
    """
    Raised when an indicator cannot be computed for a patent.
    """

    def __init__(self, message: str, patent_id: str | None = None) -> None:
        self.patent_id = patent_id
        if patent_id is not None:
            message = f"patent {patent_id}: {message}"
        super().__init__(message)


class ResamplingError(PatentValuationError):
    """
    Raised when undersampling or fold splitting preconditions fail.
    """
    pass


class ModelConfigError(PatentValuationError):
    """
    Raised when a model specification carries invalid hyperparameters.
    """
    pass


class TrainingError(PatentValuationError):
    """
    Raised when training diverges (non-finite loss or score).
    """
    pass


class GridFailedError(PatentValuationError):
    """
    Raised when every entry of a model grid failed.
    """
    pass


class EmptyFrontError(PatentValuationError):
    """
    Raised when a selection is requested from an empty Pareto front.
    """
    pass


class AttributionBudgetError(PatentValuationError):
    """
    Raised when exact Shapley attribution is requested for too many features.
    """
    pass


class ConfigError(PatentValuationError):
    """
    Raised when the run configuration file is invalid.
    """
    pass


class IntegrityError(PatentValuationError):
    """
    Raised when stored stage outputs do not match the run configuration.
    """
    pass


class OutputLockedError(PatentValuationError):
    """
    Raised when another process already holds the output directory lock.
    """
    pass
