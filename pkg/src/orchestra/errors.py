from __future__ import annotations


class OrchestraError(Exception):
    """Base class for every error raised by this package."""

    code = "error"

    def __init__(self, message: str = "", *, code: str | None = None) -> None:
        if code is not None:
            self.code = code
        super().__init__(message or self.code)


class ConfigError(OrchestraError):
    code = "config"


class GrammarError(OrchestraError):
    """Raised by the trajectory parser; ``code`` names the failure."""

    code = "malformed-xml"


class RegistryError(ConfigError):
    code = "parse-error"


class InadmissiblePair(OrchestraError):
    code = "inadmissible-pair"


class MissingFixture(ConfigError):
    code = "missing-fixture"


class ContextBudgetError(OrchestraError):
    code = "budget-too-small"


class CreditError(OrchestraError):
    code = "credit"


class CurriculumError(OrchestraError):
    code = "curriculum"


class MetricError(OrchestraError):
    code = "metric"
