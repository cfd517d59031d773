"""Exception hierarchy shared across the pipeline."""


class ExpBaseError(Exception):
    """Base class for every error raised by this package."""


class EmptyText(ExpBaseError, ValueError):
    pass


class DimensionMismatch(ExpBaseError, ValueError):
    pass


class UnknownDoc(ExpBaseError, KeyError):
    pass


class EmptyCluster(ExpBaseError, ValueError):
    pass


class CitationLeak(ExpBaseError):
    """A distilled rule cites a source outside its cluster's citation union."""


class SummarizerUnavailable(ExpBaseError):
    pass


class EmptyCorpus(ExpBaseError, ValueError):
    pass


class NoExperiences(ExpBaseError, ValueError):
    pass


class StaleParent(ExpBaseError):
    """Commit attempted against a version that is no longer the latest."""


class ConfigDrift(ExpBaseError):
    """Streaming update requested with a config that differs from the base's."""


class CorruptManifest(ExpBaseError):
    pass


class VersionGap(ExpBaseError):
    pass


class DegenerateVector(ExpBaseError, ValueError):
    pass


class UnnormalizedModel(ExpBaseError, ValueError):
    pass


class EmptyQuestion(ExpBaseError, ValueError):
    pass


class PlanInvalid(ExpBaseError):
    pass


class SpecInfeasible(ExpBaseError, ValueError):
    pass


class MissingAnnotations(ExpBaseError, ValueError):
    pass


class ConfigError(ExpBaseError, ValueError):
    pass
