import numpy as np
import pytest

from crysflow.crystal import Crystal, LatticeParams

# criterion number -> (passed, detail); filled by the acceptance tests
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"[criterion {criterion}] {'PASS' if passed else 'FAIL'}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_crystal(rng: np.random.Generator, n: int | None = None, species=("Na", "Cl", "Mg", "O")) -> Crystal:
    """Random crystal with angles in the reduced range [60, 120]."""
    n = int(rng.integers(1, 7)) if n is None else n
    while True:
        angles = rng.uniform(62, 118, 3)
        try:
            lat = LatticeParams(*rng.uniform(3, 8, 3), *angles)
        except ValueError:
            continue
        return Crystal(tuple(rng.choice(species, n)), rng.random((n, 3)), lat)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def nacl():
    from crysflow.synthetic import rocksalt

    return rocksalt("Na", "Cl", 5.64)
