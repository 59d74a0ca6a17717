"""Tasks, profiled configuration grids and clusters.

A task carries every profiled (parallelism, GPU count, runtime) alternative
for its *full* amount of work; partial progress is tracked separately through
``remaining_fraction`` so profile data never changes once loaded.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import jsonschema

from ._io import atomic_write_text
from .errors import InvalidInputError, NoConfigError, ParseError, UnschedulableTaskError

# Marker for a grid entry whose trial failed (e.g. out of memory).
INFEASIBLE = None


@dataclass(frozen=True)
class ConfigOption:
    parallelism: str
    gpu_count: int
    runtime_s: float

    def __post_init__(self):
        if isinstance(self.gpu_count, bool) or not isinstance(self.gpu_count, int) or self.gpu_count < 1:
            raise InvalidInputError(f"gpu_count must be a positive integer, got {self.gpu_count!r}")
        if not (isinstance(self.runtime_s, (int, float)) and math.isfinite(self.runtime_s) and self.runtime_s > 0):
            raise InvalidInputError(f"runtime_s must be positive and finite, got {self.runtime_s!r}")

    @property
    def key(self) -> tuple[str, int]:
        return (self.parallelism, self.gpu_count)


@dataclass(frozen=True)
class Task:
    """A training job and its profiled alternatives.

    ``overhead_s`` is fixed extra time (e.g. a checkpoint/relaunch after an
    introspective switch) that runs before the remaining work and does not
    depend on the configuration.
    """

    id: str
    configs: tuple[ConfigOption, ...]
    remaining_fraction: float = 1.0
    overhead_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "configs", tuple(self.configs))
        if not self.configs:
            raise InvalidInputError(f"task {self.id!r} has no configurations")
        seen = set()
        for cfg in self.configs:
            if cfg.key in seen:
                raise InvalidInputError(f"task {self.id!r} has duplicate configuration {cfg.key}")
            seen.add(cfg.key)
        if not (0.0 < self.remaining_fraction <= 1.0):
            raise InvalidInputError(
                f"task {self.id!r}: remaining_fraction must lie in (0, 1], got {self.remaining_fraction!r}"
            )
        if not (self.overhead_s >= 0.0 and math.isfinite(self.overhead_s)):
            raise InvalidInputError(f"task {self.id!r}: overhead_s must be >= 0")

    def effective_runtime(self, s: int) -> float:
        return self.remaining_fraction * self.configs[s].runtime_s + self.overhead_s


@dataclass(frozen=True)
class Node:
    id: str
    gpu_count: int

    def __post_init__(self):
        if isinstance(self.gpu_count, bool) or not isinstance(self.gpu_count, int) or self.gpu_count < 1:
            raise InvalidInputError(f"node {self.id!r}: gpu_count must be a positive integer")


@dataclass(frozen=True)
class Cluster:
    nodes: tuple[Node, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if not self.nodes:
            raise InvalidInputError("cluster has no nodes")
        index = {}
        for i, node in enumerate(self.nodes):
            if node.id in index:
                raise InvalidInputError(f"duplicate node id {node.id!r}")
            index[node.id] = i
        object.__setattr__(self, "_index", index)

    @classmethod
    def of(cls, *gpu_counts: int) -> "Cluster":
        """Shorthand: ``Cluster.of(8, 4)`` builds nodes ``n0`` (8 GPUs) and ``n1`` (4 GPUs)."""
        return cls(tuple(Node(f"n{i}", g) for i, g in enumerate(gpu_counts)))

    @property
    def max_gpus(self) -> int:
        return max(n.gpu_count for n in self.nodes)

    @property
    def total_gpus(self) -> int:
        return sum(n.gpu_count for n in self.nodes)

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[self._index[node_id]]
        except KeyError:
            raise InvalidInputError(f"unknown node {node_id!r}") from None

    def node_index(self, node_id: str) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise InvalidInputError(f"unknown node {node_id!r}") from None


@dataclass(frozen=True)
class GridRow:
    task_id: str
    parallelism: str
    gpus: int
    runtime_s: float | None  # None == INFEASIBLE


@dataclass(frozen=True)
class ProfileGrid:
    rows: tuple[GridRow, ...]

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        for row in self.rows:
            if row.runtime_s is not INFEASIBLE and not (math.isfinite(row.runtime_s) and row.runtime_s > 0):
                raise InvalidInputError(f"grid entry {row} has a non-positive runtime")

    def task_ids(self) -> list[str]:
        return list(dict.fromkeys(r.task_id for r in self.rows))


def check_unique_ids(tasks: Iterable[Task]) -> dict[str, Task]:
    by_id = {}
    for t in tasks:
        if t.id in by_id:
            raise InvalidInputError(f"duplicate task id {t.id!r}")
        by_id[t.id] = t
    return by_id


def enumerate_grid(parallelisms: Sequence[str], cluster: Cluster) -> list[tuple[str, int]]:
    """All (parallelism, gpu_count) plans to profile, parallelism-major."""
    if not parallelisms:
        raise InvalidInputError("at least one parallelism is required")
    return [(p, g) for p in parallelisms for g in range(1, cluster.max_gpus + 1)]


def grid_to_configs(grid: ProfileGrid, task_id: str, cluster: Cluster | None = None) -> list[ConfigOption]:
    """Feasible configurations of one task, in grid order.

    When ``cluster`` is given, configurations wider than its largest node are
    dropped as well.
    """
    configs = []
    seen = set()
    for row in grid.rows:
        if row.task_id != task_id:
            continue
        key = (row.parallelism, row.gpus)
        if key in seen:
            raise InvalidInputError(f"duplicate grid row {key} for task {task_id!r}")
        seen.add(key)
        if row.runtime_s is INFEASIBLE:
            continue
        if cluster is not None and row.gpus > cluster.max_gpus:
            continue
        configs.append(ConfigOption(row.parallelism, row.gpus, float(row.runtime_s)))
    if not configs:
        raise UnschedulableTaskError(task_id, "no feasible grid entry")
    return configs


def best_config_for(task: Task, gpus: int) -> ConfigOption:
    return task.configs[best_config_index(task, gpus)]


def best_config_index(task: Task, gpus: int) -> int:
    """Index of the fastest configuration using exactly ``gpus`` GPUs.

    Ties go to the lexicographically smallest parallelism name.
    """
    if gpus < 1:
        raise InvalidInputError("gpus must be >= 1")
    best = None
    for s, cfg in enumerate(task.configs):
        if cfg.gpu_count != gpus:
            continue
        if best is None or (cfg.runtime_s, cfg.parallelism) < (task.configs[best].runtime_s, task.configs[best].parallelism):
            best = s
    if best is None:
        raise NoConfigError(task.id, gpus)
    return best


def fits(task: Task, s: int, cluster: Cluster) -> bool:
    return task.configs[s].gpu_count <= cluster.max_gpus


def check_schedulable(tasks: Iterable[Task], cluster: Cluster) -> None:
    for t in tasks:
        if not any(fits(t, s, cluster) for s in range(len(t.configs))):
            raise UnschedulableTaskError(t.id)


# ---------------------------------------------------------------------------
# Synthetic profiles


@dataclass(frozen=True)
class Scaling:
    """Closed-form scaling curve of one task under one parallelism."""

    work_s: float
    serial_fraction: float = 0.0
    comm_cost_s: float = 0.0
    min_gpus: int = 1

    def __post_init__(self):
        if not self.work_s > 0:
            raise InvalidInputError(f"work_s must be positive, got {self.work_s!r}")
        if not 0.0 <= self.serial_fraction <= 1.0:
            raise InvalidInputError("serial_fraction must lie in [0, 1]")
        if self.comm_cost_s < 0:
            raise InvalidInputError("comm_cost_s must be >= 0")
        if self.min_gpus < 1:
            raise InvalidInputError("min_gpus must be >= 1")

    def runtime(self, g: int) -> float:
        return self.work_s * (self.serial_fraction + (1.0 - self.serial_fraction) / g) + self.comm_cost_s * (g - 1)


@dataclass(frozen=True)
class ProfileSpec:
    """Generator parameters for :func:`synthetic_profile`.

    ``tasks`` maps task id -> parallelism name -> :class:`Scaling`.  A
    parallelism listed in ``spilling`` is feasible at every width, but below
    the smallest ``min_gpus`` of the task's other parallelisms its runtime is
    multiplied by ``spill_penalty``.
    """

    tasks: Mapping[str, Mapping[str, Scaling]]
    max_gpus: int
    spilling: frozenset[str] = frozenset()
    spill_penalty: float = 1.0
    noise: float = 0.0

    def __post_init__(self):
        if self.spill_penalty < 1.0:
            raise InvalidInputError("spill_penalty must be >= 1")
        if self.max_gpus < 1:
            raise InvalidInputError("max_gpus must be >= 1")
        if self.noise < 0:
            raise InvalidInputError("noise must be >= 0")


def synthetic_profile(seed: int, spec: ProfileSpec) -> ProfileGrid:
    """Runtime grid from closed-form scaling curves, optionally with noise."""
    rng = random.Random(seed)
    rows = []
    for task_id, per_par in spec.tasks.items():
        fit_at = [sc.min_gpus for name, sc in per_par.items() if name not in spec.spilling]
        threshold = min(fit_at) if fit_at else 1
        for name, sc in per_par.items():
            for g in range(1, spec.max_gpus + 1):
                if name in spec.spilling:
                    r = sc.runtime(g) * (spec.spill_penalty if g < threshold else 1.0)
                elif g < sc.min_gpus:
                    rows.append(GridRow(task_id, name, g, INFEASIBLE))
                    continue
                else:
                    r = sc.runtime(g)
                if spec.noise:
                    r *= math.exp(rng.gauss(0.0, spec.noise))
                rows.append(GridRow(task_id, name, g, r))
    return ProfileGrid(tuple(rows))


DEFAULT_PARALLELISMS = ("ddp", "fsdp", "pipeline", "spilling")


def random_profile_spec(seed: int, n_tasks: int, max_gpus: int, work_range=(2000.0, 12000.0)) -> ProfileSpec:
    """Draw a text-model selection workload: a mix of model sizes whose
    parallelisms have different memory floors and scaling curves."""
    rng = random.Random(seed)
    lo, hi = work_range
    tasks = {}
    for i in range(n_tasks):
        size = rng.choice(("small", "medium", "large"))
        work = rng.uniform(lo, hi) * {"small": 0.5, "medium": 1.0, "large": 1.6}[size]
        fsdp_min = {"small": 1, "medium": 2, "large": min(4, max_gpus)}[size]
        pipe_min = {"small": 1, "medium": 2, "large": min(3, max_gpus)}[size]
        ddp_min = {"small": 1, "medium": max_gpus + 1, "large": max_gpus + 1}[size]
        per_par = {
            "fsdp": Scaling(work * rng.uniform(0.9, 1.1), rng.uniform(0.05, 0.2), work * rng.uniform(0.005, 0.03), fsdp_min),
            "pipeline": Scaling(work * rng.uniform(1.0, 1.25), rng.uniform(0.15, 0.4), work * rng.uniform(0.0, 0.01), pipe_min),
            "spilling": Scaling(work * rng.uniform(0.95, 1.05), rng.uniform(0.3, 0.6), work * rng.uniform(0.01, 0.05), 1),
        }
        if ddp_min <= max_gpus:
            per_par["ddp"] = Scaling(work * rng.uniform(0.8, 1.0), rng.uniform(0.02, 0.1), work * rng.uniform(0.01, 0.06), ddp_min)
        tasks[f"t{i:02d}"] = per_par
    return ProfileSpec(tasks, max_gpus, spilling=frozenset({"spilling"}), spill_penalty=rng.uniform(1.5, 3.0))


def random_workload(seed: int, n_tasks: int, cluster: Cluster, noise: float = 0.0) -> list[Task]:
    spec = random_profile_spec(seed, n_tasks, cluster.max_gpus)
    if noise:
        spec = ProfileSpec(spec.tasks, spec.max_gpus, spec.spilling, spec.spill_penalty, noise)
    grid = synthetic_profile(seed, spec)
    return [Task(tid, tuple(grid_to_configs(grid, tid, cluster))) for tid in grid.task_ids()]


# ---------------------------------------------------------------------------
# Workload and grid documents

_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["parallelism", "gpus", "runtime_s"],
    "properties": {
        "parallelism": {"type": "string", "minLength": 1},
        "gpus": {"type": "integer", "minimum": 1},
        "runtime_s": {"type": "number", "exclusiveMinimum": 0},
    },
}

_TASK_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["id", "configs"],
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "remaining_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "overhead_s": {"type": "number", "minimum": 0},
        "configs": {"type": "array", "minItems": 1, "items": _CONFIG_SCHEMA},
    },
}

_NODE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["id", "gpus"],
    "properties": {"id": {"type": "string", "minLength": 1}, "gpus": {"type": "integer", "minimum": 1}},
}

WORKLOAD_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["cluster", "tasks"],
    "properties": {
        "cluster": {"type": "array", "minItems": 1, "items": _NODE_SCHEMA},
        "tasks": {"type": "array", "items": _TASK_SCHEMA},
    },
}

GRID_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "additionalProperties": False,
        "required": ["task_id", "parallelism", "gpus", "runtime_s"],
        "properties": {
            "task_id": {"type": "string", "minLength": 1},
            "parallelism": {"type": "string", "minLength": 1},
            "gpus": {"type": "integer", "minimum": 1},
            "runtime_s": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"const": "infeasible"}]},
        },
    },
}


def format_path(parts: Iterable) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def validate_document(doc, schema) -> None:
    error = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(schema).iter_errors(doc))
    if error is not None:
        raise ParseError(format_path(error.absolute_path) or "<root>", error.message)


def task_to_dict(task: Task) -> dict:
    d = {"id": task.id}
    if task.remaining_fraction != 1.0:
        d["remaining_fraction"] = task.remaining_fraction
    if task.overhead_s:
        d["overhead_s"] = task.overhead_s
    d["configs"] = [{"parallelism": c.parallelism, "gpus": c.gpu_count, "runtime_s": c.runtime_s} for c in task.configs]
    return d


def task_from_dict(d: Mapping, path: str = "task") -> Task:
    validate_document(d, _TASK_SCHEMA)
    try:
        configs = tuple(ConfigOption(c["parallelism"], c["gpus"], float(c["runtime_s"])) for c in d["configs"])
        return Task(d["id"], configs, float(d.get("remaining_fraction", 1.0)), float(d.get("overhead_s", 0.0)))
    except InvalidInputError as exc:
        raise ParseError(path, str(exc)) from None


def cluster_to_list(cluster: Cluster) -> list[dict]:
    return [{"id": n.id, "gpus": n.gpu_count} for n in cluster.nodes]


def workload_to_dict(tasks: Sequence[Task], cluster: Cluster) -> dict:
    return {"cluster": cluster_to_list(cluster), "tasks": [task_to_dict(t) for t in tasks]}


def workload_from_dict(doc) -> tuple[list[Task], Cluster]:
    validate_document(doc, WORKLOAD_SCHEMA)
    node_ids = set()
    for i, n in enumerate(doc["cluster"]):
        if n["id"] in node_ids:
            raise ParseError(f"cluster[{i}].id", f"duplicate node id {n['id']!r}")
        node_ids.add(n["id"])
    cluster = Cluster(tuple(Node(n["id"], n["gpus"]) for n in doc["cluster"]))
    tasks, ids = [], set()
    for i, td in enumerate(doc["tasks"]):
        if td["id"] in ids:
            raise ParseError(f"tasks[{i}].id", f"duplicate task id {td['id']!r}")
        ids.add(td["id"])
        tasks.append(task_from_dict(td, f"tasks[{i}]"))
    return tasks, cluster


def dumps_workload(tasks: Sequence[Task], cluster: Cluster) -> str:
    return json.dumps(workload_to_dict(tasks, cluster), indent=2) + "\n"


def loads_workload(text: str) -> tuple[list[Task], Cluster]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError("<root>", f"invalid JSON: {exc}") from None
    return workload_from_dict(doc)


def save_workload(path, tasks: Sequence[Task], cluster: Cluster) -> None:
    atomic_write_text(path, dumps_workload(tasks, cluster))


def load_workload(path) -> tuple[list[Task], Cluster]:
    with open(path, encoding="utf-8") as fh:
        return loads_workload(fh.read())


def grid_to_rows(grid: ProfileGrid) -> list[dict]:
    return [
        {"task_id": r.task_id, "parallelism": r.parallelism, "gpus": r.gpus,
         "runtime_s": "infeasible" if r.runtime_s is INFEASIBLE else r.runtime_s}
        for r in grid.rows
    ]


def grid_from_rows(rows) -> ProfileGrid:
    validate_document(rows, GRID_SCHEMA)
    return ProfileGrid(tuple(
        GridRow(r["task_id"], r["parallelism"], r["gpus"],
                INFEASIBLE if r["runtime_s"] == "infeasible" else float(r["runtime_s"]))
        for r in rows
    ))


def save_grid(path, grid: ProfileGrid) -> None:
    atomic_write_text(path, json.dumps(grid_to_rows(grid), indent=2) + "\n")


def load_grid(path) -> ProfileGrid:
    with open(path, encoding="utf-8") as fh:
        try:
            rows = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError("<root>", f"invalid JSON: {exc}") from None
    return grid_from_rows(rows)
