"""Recursive conditional decomposition likelihoods for Potts Markov random fields."""

__version__ = "0.1.0"

from .lattice import (  # noqa: E402
    DecompositionPlan,
    LatticeGeometry,
    Order,
    build_geometry,
    build_plan,
    build_plan_first_order,
    build_plan_second_order,
    default_T,
)
from .potts import (  # noqa: E402
    CapacityError,
    PottsModel,
    bond_count,
    exact_log_constant,
    exact_log_likelihood,
    expected_bonds_curve,
    gibbs_sample,
)
from .likelihood import (  # noqa: E402
    ModelParams,
    RangeError,
    TdiTable,
    build_tdi_table,
    conditional_block_loglik,
    make_likelihood,
    pseudo_loglik,
    rcoda_loglik_first,
    rcoda_loglik_second,
    tdi_loglik,
)
from .inference import McmcSettings, Prior, mple_beta, sample_posterior, summarize  # noqa: E402
