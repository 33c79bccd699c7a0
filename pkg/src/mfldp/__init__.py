"""Mean-field Gibbs measures, their free energy and large-deviation checks."""

__version__ = "0.1.0"

from .errors import ConfigError, MFLDPError, NumericalFailure
from .free_energy import (critical_map, fixed_point, free_energy, interaction_energy,
                          minimize, rate_identification, stationary_residual)
from .gibbs import (GibbsModel, curie_weiss, grad_hamiltonian, hamiltonian,
                    log_partition_estimate, log_partition_exact, quadratic_product_model,
                    sample_mcmc, simulate_sde)
from .spaces import (DiscreteMeasure, EmpiricalMeasure, EuclideanSpace, FiniteSpace,
                     relative_entropy)
from .wasserstein import tail_condition_check, wasserstein_1d, wasserstein_exact

__all__ = [
    "ConfigError", "DiscreteMeasure", "EmpiricalMeasure", "EuclideanSpace", "FiniteSpace",
    "GibbsModel", "MFLDPError", "NumericalFailure", "critical_map", "curie_weiss",
    "fixed_point", "free_energy", "grad_hamiltonian", "hamiltonian", "interaction_energy",
    "log_partition_estimate", "log_partition_exact", "minimize", "quadratic_product_model",
    "rate_identification", "relative_entropy", "sample_mcmc", "simulate_sde",
    "stationary_residual", "tail_condition_check", "wasserstein_1d", "wasserstein_exact",
]
