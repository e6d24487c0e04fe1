from src.kernels.pairwise import (
    get_executor,
    get_worker_count,
    pair_reduce,
    set_worker_count,
)
from src.kernels.quadrature import (
    QuadratureGrid,
    QuadratureGridError,
    eval_phi_prime_analytic,
    eval_phi_quadrature,
)
from src.kernels.softened import (
    ParticleSource,
    SofteningParam,
    WeightedSource,
    eval_E,
    eval_E_jacobian,
    eval_phi,
    eval_phi_grad,
    eval_psi,
    eval_vector_newton,
)

__all__ = [
    "ParticleSource",
    "QuadratureGrid",
    "QuadratureGridError",
    "SofteningParam",
    "WeightedSource",
    "eval_E",
    "eval_E_jacobian",
    "eval_phi",
    "eval_phi_grad",
    "eval_phi_prime_analytic",
    "eval_phi_quadrature",
    "eval_psi",
    "eval_vector_newton",
    "get_executor",
    "get_worker_count",
    "pair_reduce",
    "set_worker_count",
]
