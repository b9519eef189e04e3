"""Sample-compression generalization certificates and the Pick-To-Learn
meta-algorithm."""

from .bounds import (
    BoundDomainError,
    BoundInputs,
    BoundKind,
    Certificate,
    ComparatorSpec,
    binomial_approx_bound,
    binomial_tail_bound,
    binomial_tail_inv,
    generic_compression_bound,
    kl_compression_bound,
    kl_div,
    kl_inv,
    linear_compression_bound,
    linear_compression_bound_grid,
    log_choose,
    maurer_sum,
    p2l_bound,
    rescaled_kl_bound,
    zeta_prior,
)

__version__ = "0.1.0"
