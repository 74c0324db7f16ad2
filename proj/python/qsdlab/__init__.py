"""Quasi-stationary distributions of killed reversible Markov processes."""

from ._qsdlab import (
    Diffusion1D,
    DoobGenerator,
    PrincipalEigenpair,
    QsdlabError,
    ReversibleGenerator,
    classify_boundary,
    conditional_law,
    discretize,
    doob_transform,
    exp_lifetime_moments,
    is_class_t,
    make_random_generator,
    principal_eigenpair,
    qsd,
    qsd_density,
    semigroup_apply,
    uniqueness_check,
    validate_generator,
    yaglom,
)

__all__ = [
    "Diffusion1D",
    "DoobGenerator",
    "PrincipalEigenpair",
    "QsdlabError",
    "ReversibleGenerator",
    "classify_boundary",
    "conditional_law",
    "discretize",
    "doob_transform",
    "exp_lifetime_moments",
    "is_class_t",
    "make_random_generator",
    "principal_eigenpair",
    "qsd",
    "qsd_density",
    "semigroup_apply",
    "uniqueness_check",
    "validate_generator",
    "yaglom",
]
