"""Integer codes shared by both kernel backends."""
from ..approx import PARAMETERIZATIONS, TORSOS
from ..learners import ALGORITHMS, PHI_TARGETS, PSI_TARGETS, THETA_TARGETS

TORSO = {name: i for i, name in enumerate(TORSOS)}
PARAMETERIZATION = {name: i for i, name in enumerate(PARAMETERIZATIONS)}
ALGORITHM = {name: i for i, name in enumerate(ALGORITHMS)}
THETA = {name: i for i, name in enumerate(THETA_TARGETS)}
PHI = {name: i for i, name in enumerate(PHI_TARGETS)}
PSI = {name: i for i, name in enumerate(PSI_TARGETS)}

DIVERGENCE_LIMIT = 1e12


def decode(table: dict, code: int) -> str:
    return next(name for name, i in table.items() if i == code)
