"""Exception hierarchy.

Every error carries a short machine-readable ``code``; the CLI prints
``<code>: <message>`` on a single line and exits with status 1.
"""


class GeeMortError(Exception):
    code = "E_MODEL"

    def __str__(self):
        return " ".join(str(a) for a in self.args) if self.args else self.code


# -- ingestion ---------------------------------------------------------------
class InputIOError(GeeMortError):
    code = "E_IO"


class MissingColumn(GeeMortError):
    code = "E_MISSING_COLUMN"


class BadValue(GeeMortError):
    code = "E_BAD_VALUE"

    def __init__(self, row, column, reason):
        super().__init__(f"row {row}, column {column!r}: {reason}")
        self.row = row
        self.column = column
        self.reason = reason


class DuplicateKey(GeeMortError):
    code = "E_DUPLICATE_KEY"


class EmptyInput(GeeMortError):
    code = "E_EMPTY"


class InconsistentPanel(GeeMortError):
    code = "E_INCONSISTENT_PANEL"


class MissingExposure(GeeMortError):
    code = "E_MISSING_EXPOSURE"


# -- design ------------------------------------------------------------------
class RaggedPanel(GeeMortError):
    code = "E_RAGGED"


class KtCoverageGap(GeeMortError):
    code = "E_KT_GAP"


class UnknownLevel(GeeMortError):
    code = "E_UNKNOWN_LEVEL"


# -- estimation --------------------------------------------------------------
class Singular(GeeMortError):
    code = "E_SINGULAR"


class NoConvergence(GeeMortError):
    code = "E_NO_CONVERGENCE"


class NotPositiveDefinite(GeeMortError):
    code = "E_NOT_PD"


class DimensionExceeded(GeeMortError):
    code = "E_DIMENSION"


class InsufficientPairs(GeeMortError):
    code = "E_INSUFFICIENT_PAIRS"


class UnbalancedForUnstructured(GeeMortError):
    code = "E_UNBALANCED"


# -- scoring / forecasting ---------------------------------------------------
class NotConverged(GeeMortError):
    code = "E_NOT_CONVERGED"


class DesignMismatch(GeeMortError):
    code = "E_DESIGN_MISMATCH"


class ColumnMismatch(GeeMortError):
    code = "E_COLUMN_MISMATCH"


class TooShort(GeeMortError):
    code = "E_TOO_SHORT"
