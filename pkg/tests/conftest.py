"""Shared fixtures: the dimension-6 unipotent example and its tower states."""
from __future__ import annotations

import json
import random
from fractions import Fraction

import pytest

from s2tower.exactlin import Matrix
from s2tower.tower import DEFAULT_PARAMS, bootstrap, jordan_block, run_tower, step_hnn

FIXTURE_SEED = 7
HNN_V = (("u", 1), ("t", 1), ("u", -1))

# filled by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def dim6_config(**overrides) -> dict:
    cfg = {
        "n": 6,
        "r": 4,
        "H": [{"name": "u", "matrix": jordan_block(6).to_json()}],
        "A": [],
        "budgets": {**DEFAULT_PARAMS, "stages": 3},
        "seed": FIXTURE_SEED,
        "out": "run",
    }
    cfg.update(overrides)
    return cfg


def write_config(path, cfg) -> str:
    path.write_text(json.dumps(cfg, sort_keys=True, indent=2), encoding="utf-8")
    return str(path)


def rand_matrix(rng: random.Random, n: int, height: int = 10) -> Matrix:
    return Matrix([[Fraction(rng.randint(-height, height), rng.randint(1, height)) for _ in range(n)]
                   for _ in range(n)])


def rand_invertible(rng: random.Random, n: int, height: int = 10) -> Matrix:
    while True:
        m = rand_matrix(rng, n, height)
        if m.det() != 0:
            return m


@pytest.fixture(scope="session")
def boot_state():
    return bootstrap([("u", jordan_block(6))], [], 4, radius=4, seed=FIXTURE_SEED,
                     params=dict(DEFAULT_PARAMS))


@pytest.fixture(scope="session")
def stage3_state(boot_state):
    state, _ = run_tower(boot_state.copy(), 3)
    return state


@pytest.fixture(scope="session")
def hnn_state(stage3_state):
    return step_hnn(stage3_state, HNN_V)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def run_cli(argv) -> int:
    from s2tower.cli import main
    return main([str(a) for a in argv])


@pytest.fixture(scope="session")
def cli_runs(tmp_path_factory):
    """Two independent CLI runs (bootstrap, three stages, verify) from one config."""
    base = tmp_path_factory.mktemp("cli")
    cfg = write_config(base / "config.json", dim6_config())
    runs = []
    for name in ("first", "second"):
        out = base / name
        codes = [
            run_cli(["bootstrap", "--config", cfg, "--out", out]),
            run_cli(["tower", "--config", cfg, "--out", out, "--stages", 3]),
            run_cli(["verify", "--out", out]),
        ]
        runs.append((out, codes))
    return cfg, runs
