"""Open-system models of optical cavities under coherent and measurement-based feedback.

Modules: ``fock`` (truncated Fock spaces, operators, states, baths),
``generators`` (Liouvillians and the Lindblad-form check), ``evolve``
(propagation, steady states), ``trajectories`` (stochastic unravelings),
``langevin`` (closed-form linear quadrature model) and ``scenario``/``cli``
(declarative runs).
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    InvalidArgument,
    MalformedGenerator,
    NoUniqueSteadyState,
    StateInvariantError,
    StepTooLarge,
    UnphysicalBath,
    Unsupported,
)
from .fock import BathParams, DensityMatrix, Operator  # noqa: F401
from .generators import Liouvillian  # noqa: F401
from .policy import DEFAULT_POLICY, NumericPolicy  # noqa: F401
