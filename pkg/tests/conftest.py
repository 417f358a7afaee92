import jax
import numpy as np
import pytest

from geovmc import model as model_lib
from geovmc.geometry import MolecularConfiguration
from geovmc.runner.checks import small_model_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def lih_like():
    """Four non-coplanar nuclei, four electrons: no frame fallback, both spin channels."""
    config = MolecularConfiguration([[0.0, 0.0, 0.0], [0.0, 0.3, 1.6], [1.1, -0.4, 0.2], [-0.3, 1.2, 0.5]], [1, 1, 1, 1], 2, 2)
    cfg = small_model_config(2, 2)
    theta = model_lib.init_model(jax.random.PRNGKey(3), cfg)
    # make the generated slots depend visibly on the geometry
    theta["gnn"] = jax.tree_util.tree_map(lambda x: x + 0.05 * jax.numpy.sin(jax.numpy.arange(x.size).reshape(x.shape) + 1.0), theta["gnn"])
    return config, cfg, theta


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record a criterion's PASS/FAIL line for the end-of-run summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def add(label, result):
        lines.append(f"[{label}] {result.line()}")
        print(lines[-1])

    return add


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
