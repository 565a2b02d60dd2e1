"""Exception hierarchy.

Every failure the pipeline can surface derives from ``AutoRLError`` so the CLI
can map whole families onto exit codes.
"""

from __future__ import annotations


class AutoRLError(Exception):
    """Base class for all package errors."""

    exit_code = 1


# -- templates ---------------------------------------------------------------


class TemplateError(AutoRLError):
    exit_code = 10


class TemplateMissing(TemplateError):
    pass


class TemplateIntegrityError(TemplateError):
    pass


class UnresolvedPlaceholder(TemplateError):
    pass


# -- gateway -----------------------------------------------------------------


class GatewayError(AutoRLError):
    exit_code = 3


class ProviderTimeout(GatewayError):
    pass


class ProviderRefusal(GatewayError):
    pass


class FixtureMiss(GatewayError):
    def __init__(self, fingerprint: str, template_id: str = ""):
        self.fingerprint = fingerprint
        self.template_id = template_id
        where = f" (template {template_id})" if template_id else ""
        super().__init__(f"no replay fixture for fingerprint {fingerprint}{where}")


class DuplicateFixture(GatewayError):
    def __init__(self, fingerprint: str):
        self.fingerprint = fingerprint
        super().__init__(f"fingerprint {fingerprint} is already bound to a different response")


# -- parsing -----------------------------------------------------------------


class ParseError(AutoRLError):
    exit_code = 6


class AnalysisParseError(ParseError):
    def __init__(self, message: str, section: str | None = None):
        self.section = section
        super().__init__(message)


class ComponentParseError(ParseError):
    pass


class ChoiceParseError(ParseError):
    pass


class DesignParseError(ParseError):
    pass


class PatchParseError(ParseError):
    pass


class OutOfMenu(ParseError):
    def __init__(self, name: str, menu):
        self.name = name
        self.menu = tuple(menu)
        super().__init__(f"algorithm {name!r} is not one of the candidates {list(self.menu)}")


class MenuViolation(ParseError):
    def __init__(self, field: str, value: str, menu):
        self.field = field
        self.value = value
        self.menu = tuple(menu)
        super().__init__(f"{field} {value!r} is not one of {list(self.menu)}")


# -- hyperparameter patches --------------------------------------------------


class PatchValidationError(AutoRLError):
    exit_code = 8


class TooManyChanges(PatchValidationError):
    def __init__(self, count: int, limit: int):
        self.count = count
        self.limit = limit
        super().__init__(f"{count} changes proposed, max {limit}")


class IncrementViolation(PatchValidationError):
    def __init__(self, key: str, bound: float, change: float | None = None):
        self.key = key
        self.bound = bound
        self.change = change
        detail = f" ({change:+.2%})" if change is not None else ""
        super().__init__(f"change to {key!r}{detail} is not within the {bound:.0%} incremental bound")


class UnknownKey(PatchValidationError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"unknown hyperparameter {key!r}")


class RangeViolation(PatchValidationError):
    def __init__(self, key: str, value, low, high):
        self.key = key
        super().__init__(f"{key}={value!r} outside safe range [{low}, {high}]")


class PatchTypeError(PatchValidationError):
    pass


# -- synthesis / verification ------------------------------------------------


class RepairBudgetExceeded(AutoRLError):
    exit_code = 4

    def __init__(self, role: str, cap: int):
        self.role = role
        self.cap = cap
        super().__init__(f"repair budget of {cap} exhausted for the {role} component")


class SandboxUnavailable(AutoRLError):
    exit_code = 4


class EnvironmentFault(AutoRLError):
    exit_code = 5


# -- training ----------------------------------------------------------------


class BackendFault(AutoRLError):
    exit_code = 5

    def __init__(self, message: str, partial_series=None):
        self.partial_series = list(partial_series or [])
        super().__init__(message)


class UnknownBackend(AutoRLError):
    exit_code = 5


class WrapperRuntimeFault(AutoRLError):
    exit_code = 5

    def __init__(self, feedback):
        self.feedback = feedback
        super().__init__(feedback.message)


class EmptySeries(AutoRLError):
    pass


class EmptyOutcomes(AutoRLError):
    pass


class ZeroBaseline(AutoRLError):
    pass


# -- workspace ---------------------------------------------------------------


class WorkspaceError(AutoRLError):
    exit_code = 7


class CorruptRecord(WorkspaceError):
    def __init__(self, index: int, path, reason: str = ""):
        self.index = index
        self.path = path
        super().__init__(f"corrupt history record #{index} in {path}" + (f": {reason}" if reason else ""))


class HistoryConflict(WorkspaceError):
    pass


class SchemaViolation(WorkspaceError):
    pass


class UnknownRun(WorkspaceError):
    def __init__(self, run_id: str):
        self.run_id = run_id
        super().__init__(f"unknown run {run_id!r}")
