import numpy as np
import pytest
from hypothesis import settings

from mvmrf.lattice import StackedLattice, build_grid_lattice
from mvmrf.model import EnsembleDataset, ModelState, PriorSpec, standardize
from mvmrf.precision import DependenceParams

settings.register_profile("mvmrf", deadline=None, max_examples=40)
settings.load_profile("mvmrf")


def stacked(nx, ny, p):
    return StackedLattice(build_grid_lattice(nx, ny), p)


def random_dataset(lattice, m, rng, q1=2):
    n = lattice.n
    y = rng.standard_normal((m, lattice.p, n))
    X1 = standardize(rng.standard_normal((n, q1)))
    X2 = np.ones((n, 1))
    return EnsembleDataset(lattice, y, X1, X2)


def random_state(data, rng, dep=None):
    m, p, n, q1, q2 = data.m, data.p, data.n, data.q1, data.q2
    dim = n * p
    if dep is None:
        dep = DependenceParams.from_vector(
            rng.uniform(-0.1, 0.1, size=len(DependenceParams.zeros(p).vector())),
            rng.uniform(0.5, 2.0, size=p))
    return ModelState(
        alpha=rng.standard_normal((p, q1)),
        beta_r=rng.standard_normal((m, p, q2)),
        beta_bar=rng.standard_normal((p, q2)),
        h_r=rng.standard_normal((m, dim)),
        h_bar=rng.standard_normal(dim),
        sigma2=rng.uniform(0.5, 2.0, size=p),
        sigma2_b=float(rng.uniform(0.5, 2.0)),
        dep=dep,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def proper_prior():
    return PriorSpec(variance_shape=1.0, variance_rate=0.1)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, title, ok, detail=""):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
