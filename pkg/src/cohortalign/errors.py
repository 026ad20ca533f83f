"""Exception types shared across the package."""


class CohortAlignError(Exception):
    """Base class for all cohortalign errors."""


class SchemaError(CohortAlignError):
    """A required column role is missing or misdeclared."""


class ParseError(CohortAlignError):
    """A cell could not be converted to the declared type."""


class SupportError(CohortAlignError):
    """A cohort (or weighted subgroup) has no mass."""


class ShapeError(CohortAlignError):
    """Array dimensions do not agree."""


class CollinearityError(CohortAlignError):
    """The regression design matrix is rank deficient."""


class SingularityError(CohortAlignError):
    """A within-cohort covariance matrix is singular."""


class InsufficientDataError(CohortAlignError):
    """Too few subjects in a cohort for the requested model."""


class DomainError(CohortAlignError):
    """A numeric input lies outside the operation's domain."""


class DegenerateWeightsError(CohortAlignError):
    """All raw weights are zero; normalization is undefined."""


class FeatureSpecError(CohortAlignError):
    """A feature specification does not match the dataset."""


class PairingError(CohortAlignError):
    """Bootstrap results come from different replicate streams."""


class StudyError(CohortAlignError):
    """Too many simulation replicates failed."""
