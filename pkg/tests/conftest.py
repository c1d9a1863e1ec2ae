import numpy as np
import pytest

from adagp.model import zoo_spec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["minimlp", "minicnn", "minivgg"])
def zoo_name(request):
    return request.param


@pytest.fixture
def zoo(zoo_name):
    return zoo_spec(zoo_name)


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    """Isolated output root picked up through the environment."""
    root = tmp_path / "runs"
    monkeypatch.setenv("ADAGP_OUTPUT_ROOT", str(root))
    return root


def separated(rng, shape, gap=0.05):
    """Random values with pairwise gaps, so max pooling has no near-ties."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap - n * gap / 2).reshape(shape)


_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an exit criterion, then assert it."""
    verdicts = request.config.stash.setdefault(_VERDICTS, {})

    def check(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        verdicts[number] = line
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash.get(_VERDICTS, {})
    if verdicts:
        terminalreporter.section("exit criteria")
        for number in sorted(verdicts):
            terminalreporter.write_line(verdicts[number])
