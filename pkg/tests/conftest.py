import itertools

import numpy as np
import pytest

from em_bounds.model import ScenarioModel, transfer_batch
from em_bounds.scenario import ScenarioSpec, generate


def make_model(seed: int, n_s: int = 4, coupling: float = 0.3, n_t: int = 2, n_r: int = 2,
               **kw) -> ScenarioModel:
    return generate(ScenarioSpec(n_t, n_r, n_s, coupling, seed=seed, **kw))


def all_bits(n: int) -> np.ndarray:
    return np.array(list(itertools.product([0, 1], repeat=n)), dtype=np.int8)


def brute_force(model: ScenarioModel, h_des=None) -> float:
    """Independent oracle: evaluate every configuration with a full solve."""
    hs = transfer_batch(model, all_bits(model.n_s))
    fro = np.sum(np.abs(hs) ** 2, axis=(1, 2))
    if h_des is None:
        return float(fro.max())
    inner = np.einsum("ij,kij->k", np.conj(h_des), hs)
    return float(np.max(np.abs(inner) ** 2 / (fro * np.sum(np.abs(h_des) ** 2))))


def random_complex(rng: np.random.Generator, *shape) -> np.ndarray:
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
