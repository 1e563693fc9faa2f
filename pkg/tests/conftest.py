import numpy as np
import pytest

from countyshap import synthetic
from countyshap.forest import DecisionTree, Forest, ForestConfig, Internal, Leaf

_CRITERIA: dict[str, tuple[bool, str]] = {}


class CriterionRecorder:
    """Records one pass/fail line per acceptance criterion for the terminal summary."""

    def __init__(self, label: str):
        self.label = label
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            _CRITERIA[self.label] = ("PASS", self.detail)
        elif issubclass(exc_type, pytest.skip.Exception):
            _CRITERIA[self.label] = ("SKIP", str(exc))
        else:
            first = str(exc).strip().splitlines()[0] if str(exc).strip() else ""
            _CRITERIA[self.label] = ("FAIL", f"{self.detail} -- {exc_type.__name__}: {first}".strip(" -"))
        return False


@pytest.fixture
def criterion(request):
    def make(label: str) -> CriterionRecorder:
        return CriterionRecorder(label)

    return make


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: int(s.split()[0])):
        status, msg = _CRITERIA[label]
        terminalreporter.write_line(f"[{status}] criterion {label}: {msg}")


def forest_of(roots, feature_names, seed=0):
    trees = tuple(r if isinstance(r, DecisionTree) else DecisionTree.from_root(r, sample_id=(seed, i))
                  for i, r in enumerate(roots))
    return Forest(trees, ForestConfig(n_trees=len(trees), seed=seed), tuple(feature_names))


@pytest.fixture
def stump():
    """split x0 < 0.5; leaves 0.2 (coverage 30) and 0.6 (coverage 10)."""
    return Internal(0, 0.5, Leaf(0.2, 30.0, 30), Leaf(0.6, 10.0, 10))


@pytest.fixture
def example_tree():
    """Hand-built tree over (perc_rep, perc_black, perc_old65) in the shape of the worked example."""
    return DecisionTree.from_root(
        Internal(0, 0.5,
                 Internal(1, 0.1, Leaf(0.66, 700.0, 700), Leaf(0.55, 500.0, 500)),
                 Internal(1, 0.35,
                          Internal(2, 0.2, Leaf(0.32, 45.0, 45), Leaf(0.40, 300.0, 300)),
                          Leaf(0.27, 693.0, 693)))
    )


@pytest.fixture(scope="session")
def county_ds():
    return synthetic.counties(400, seed=3)


@pytest.fixture(scope="session")
def small_forest(county_ds):
    from countyshap.forest import train_forest

    return train_forest(county_ds, ForestConfig(n_trees=25, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
