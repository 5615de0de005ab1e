import numpy as np
import pytest

from samrl.nn_core import MlpSpec, init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_net(rng, input_dim=None, output_dim=None, head="linear", activation=None):
    spec = MlpSpec(
        input_dim or int(rng.integers(1, 6)),
        tuple(int(h) for h in rng.integers(1, 9, size=int(rng.integers(0, 3)))),
        output_dim or int(rng.integers(1, 4)),
        activation or str(rng.choice(["relu", "tanh"])),
        head,
    )
    return spec, init_params(spec, rng)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
