"""Exception types raised by the estimation pipeline."""


class RmcstError(Exception):
    """Base class for all errors raised by this package."""


# --- dataset loading / validation ---

class MissingColumnError(RmcstError):
    pass


class NonNumericCellError(RmcstError):
    def __init__(self, row, column, value):
        self.row = row
        self.column = column
        super().__init__(f"non-numeric value {value!r} at data row {row}, column {column!r}")


class InvalidIndicatorError(RmcstError):
    pass


class NegativeTimeError(RmcstError):
    pass


class EmptyArmError(RmcstError):
    pass


class DimensionMismatchError(RmcstError):
    pass


# --- model fitting ---

class SingularDesignError(RmcstError):
    pass


class SeparationError(RmcstError):
    """Perfect or quasi-perfect separation in the treatment model."""


class ConvergenceError(RmcstError):
    pass


class SingularInformationError(RmcstError):
    pass


# --- weighting ---

class AllUnitsTrimmedError(RmcstError):
    pass


class ArmEmptyAfterTrimError(RmcstError):
    pass


class RefitFailedError(RmcstError):
    pass


class ZeroTotalWeightError(RmcstError):
    pass


# --- estimation ---

class EmptyRiskSetError(RmcstError):
    pass


class ZeroWeightArmError(RmcstError):
    pass


class NonpositiveLError(RmcstError):
    pass


# --- inference ---

class InvalidBError(RmcstError):
    pass


class TooManyFailedReplicatesError(RmcstError):
    pass


# --- simulation ---

class TruthMissingError(RmcstError):
    pass


class RootNotBracketedError(RmcstError):
    pass
