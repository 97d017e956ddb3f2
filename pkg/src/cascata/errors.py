"""Exception hierarchy shared by all cascata modules."""


class CascataError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class DataError(CascataError):
    """Problems with input data files or their contents."""

    exit_code = 3


class MalformedRecord(DataError):
    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class NonRectangular(DataError):
    def __init__(self, missing_cells):
        self.missing_cells = list(missing_cells)
        shown = ", ".join(f"({q}, {m})" for q, m in self.missing_cells[:5])
        more = "" if len(self.missing_cells) <= 5 else f" and {len(self.missing_cells) - 5} more"
        super().__init__(f"missing (query, model) cells: {shown}{more}")


class BadConfidence(DataError):
    pass


class NTrainTooLarge(DataError):
    pass


class NoIncorrectExamples(DataError):
    def __init__(self, model_id):
        self.model_id = model_id
        super().__init__(f"model {model_id!r} has no incorrect training examples")


class MissingPrice(DataError):
    def __init__(self, model_id):
        self.model_id = model_id
        super().__init__(f"price sheet has no entry for model {model_id!r}")


class FittingError(CascataError):
    """Statistical fitting cannot proceed on the given data."""

    exit_code = 4


class AllInfinite(FittingError):
    pass


class SingleClassTrainingSet(FittingError):
    pass


class EmptyInput(FittingError):
    pass


class SingularInformation(FittingError):
    pass


class TooFewInteriorPoints(FittingError):
    pass


class DegenerateInput(FittingError):
    pass


class TauOutOfRange(FittingError):
    pass


class TooFewPoints(FittingError):
    pass


class ModelError(CascataError):
    """Inconsistent cascade model or invalid evaluation request."""

    exit_code = 5


class ConditioningOnNullEvent(ModelError):
    pass


class MissingPairCopula(ModelError):
    def __init__(self, pair):
        self.pair = pair
        super().__init__(f"no fitted copula for model pair {pair}")


class OptimizerDiverged(CascataError):
    exit_code = 6


class EmptySweep(CascataError):
    exit_code = 6


class CandidateBudgetExceeded(CascataError):
    exit_code = 6


class SinglePoint(CascataError):
    exit_code = 6
