import json
from pathlib import Path

import pytest

from bitdlab.mdp import Policy, backward_kernel, build_chain, build_two_state, mdp_from_dict
from oracles import SMALL_SPEC


@pytest.fixture(scope="session")
def frozen():
    return json.loads((Path(__file__).parent / "fixtures" / "frozen.json").read_text())


@pytest.fixture(scope="session")
def chain9():
    return build_chain()


@pytest.fixture(scope="session")
def benchmark_mdps():
    return {"chain9": build_chain(), "two_state": build_two_state(),
            "chain5_g09": build_chain(5, 5.0, 0.9), "small": mdp_from_dict(SMALL_SPEC)}


@pytest.fixture(scope="session")
def kernels_by_name(benchmark_mdps):
    return {name: backward_kernel(m, Policy.uniform(m)) for name, m in benchmark_mdps.items()}
