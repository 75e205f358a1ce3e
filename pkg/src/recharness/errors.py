"""Exception hierarchy for the harness.

Every error raised on a contract violation derives from :class:`HarnessError`
so callers (and the CLI) can catch harness failures without swallowing
programming errors.
"""


class HarnessError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameter(HarnessError):
    """An argument violates a documented precondition."""


# --- dataset loading -------------------------------------------------------

class MalformedRow(HarnessError):
    """A TSV row failed to parse; carries file, 1-based line number, reason."""

    def __init__(self, path: str, line_no: int, reason: str):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{self.path}:{line_no}: {reason}")


class DanglingReference(HarnessError):
    """An event references a user or item missing from the catalogs."""


class DuplicateId(HarnessError):
    """A catalog contains the same identifier twice."""


# --- fold protocol ---------------------------------------------------------

class TooFewEvents(HarnessError):
    """Dataset has fewer events than requested folds."""


class InvalidK(HarnessError):
    """Fold count outside the supported range (k >= 3)."""


class InconsistentSplit(HarnessError):
    """A RunSplit or FoldPlan does not match the dataset/plan it is used with."""


# --- metrics ---------------------------------------------------------------

class UserMismatch(HarnessError):
    """Prediction list and ground truth belong to different users."""


class InvalidCatalogSize(HarnessError):
    """Coverage requested against a non-positive catalog size."""


# --- slices ----------------------------------------------------------------

class EmptyTraining(HarnessError):
    """An operation requiring training events received none."""


class UnknownSliceKind(HarnessError):
    """Slice kind is not one of the supported group definitions."""


# --- behavioral ------------------------------------------------------------

class EmptyHistory(HarnessError):
    """History perturbation requested for a user with no events."""


class UnknownItem(HarnessError):
    """An item id could not be resolved in the item catalog."""


# --- model protocol --------------------------------------------------------

class BudgetExceeded(HarnessError):
    """Training requested for a new hyperparameter setting past the budget."""


class ModelQueryFailure(HarnessError):
    """A model failed to answer a recommendation query."""


class ExternalModelFailure(HarnessError):
    """External model process exited nonzero or could not be started."""


class MalformedPredictions(HarnessError):
    """predictions.tsv missing, unparseable, or violating the contract."""


class Timeout(HarnessError):
    """External model exceeded its wall-clock limit."""


# --- scoring / verification ------------------------------------------------

class MissingTestValue(HarnessError):
    """A test/run pair required for aggregation is absent."""


class EmptyInput(HarnessError):
    """Bootstrap requested over an empty value list."""


class IncompatibleReports(HarnessError):
    """Two reports cannot be statistically compared (version/k/test set)."""
