import time

import pytest

from ldgen.config import RunConfig
from ldgen.training import train_adapter, train_joint

JOINT_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def adapter_run():
    """Default toy alignment run: 48 -> 64, t_out=8, 2,000 pairs, 1,000 steps."""
    cfg = RunConfig()
    start = time.perf_counter()
    ckpt, metrics = train_adapter(cfg)
    return cfg, ckpt, metrics, time.perf_counter() - start


@pytest.fixture(scope="session")
def joint_runs(adapter_run):
    """Paired true/shuffled joint runs per seed from the shared adapter, at equal steps."""
    _, adapter_ckpt, _, _ = adapter_run
    runs = {}
    for seed in JOINT_SEEDS:
        for mode in ("true", "shuffled"):
            cfg = RunConfig(stage="joint", seed=seed, condition_mode=mode)
            ckpt, metrics = train_joint(cfg, adapter_ckpt)
            runs[seed, mode] = (cfg, ckpt, metrics)
    return runs


ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
