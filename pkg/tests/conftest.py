import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from spase.workload import Cluster, ConfigOption, Task  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"

PARALLELISMS = ("ddp", "fsdp", "pipeline", "spilling")


def canonical():
    """Two tasks, each with a slow 1-GPU and a fast 2-GPU option, on one 2-GPU node."""
    cfgs = (ConfigOption("spilling", 1, 10.0), ConfigOption("fsdp", 2, 6.0))
    return [Task("t0", cfgs), Task("t1", cfgs)], Cluster.of(2)


def small_instance(rng: random.Random, max_tasks=3, max_nodes=2, max_gpus=3, max_configs=3, integer=True):
    """Random instance within the oracle limits; runtimes are small integers so ties occur."""
    cluster = Cluster.of(*[rng.randint(1, max_gpus) for _ in range(rng.randint(1, max_nodes))])
    tasks = []
    for i in range(rng.randint(1, max_tasks)):
        keys = set()
        while len(keys) < rng.randint(1, max_configs):
            keys.add((rng.choice(PARALLELISMS), rng.randint(1, cluster.max_gpus)))
        cfgs = tuple(ConfigOption(p, g, float(rng.randint(1, 20)) if integer else rng.uniform(1, 20))
                     for p, g in sorted(keys))
        frac = 1.0 if rng.random() < 0.7 else rng.choice((0.25, 0.5, 0.75))
        tasks.append(Task(f"t{i}", cfgs, remaining_fraction=frac))
    return tasks, cluster


@pytest.fixture
def canon():
    return canonical()
