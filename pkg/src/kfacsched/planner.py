"""Planners for factor-aggregation fusion and inverse-workload placement.

Two one-time decisions shape a distributed K-FAC iteration:

1. How to batch the per-layer symmetric factors into collective all-reduce
   operations (fusion).  Communicating every factor on its own pays the
   collective startup latency per layer; communicating everything at once
   forfeits any overlap with the pass that produces the factors.  Four
   policies cover the spectrum, including a greedy criterion-driven one that
   merges a factor into the pending group whenever it would be ready before
   the pending group's communication could get past its startup phase.

2. Which worker inverts which aggregated factor (placement).  Each tensor is
   either inverted on one worker and broadcast (CT), or inverted redundantly
   on every worker with no communication at all (NCT).  The load-balancing
   placement sorts tensors by dimension, classifies each against the cost
   models, and greedily assigns CTs to the least-loaded worker.

Planners are pure; plans are immutable values.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Sequence

from .perfmodel import AllReduceParams, BcastParams, InverseParams, bcast_time, inverse_time

__all__ = [
    "FactorKind",
    "FactorTask",
    "FusionPolicy",
    "FusionPlan",
    "InvTask",
    "PlacementPlan",
    "plan_fusion",
    "lbp_place",
    "seq_place",
    "local_place",
    "placement_makespan",
    "DEFAULT_FUSION_THRESHOLD_BYTES",
    "BYTES_PER_ELEMENT",
]

# Threshold-policy default: 64 MiB of float64 payload per fused group.
DEFAULT_FUSION_THRESHOLD_BYTES = 64 * 2**20
BYTES_PER_ELEMENT = 8


class FactorKind(enum.Enum):
    A = "A"
    G = "G"


class FusionPolicy(enum.Enum):
    NAIVE = "naive"          # one group per pass, communicated after the pass
    LAYERWISE = "layerwise"  # one group per factor
    THRESHOLD = "threshold"  # merge consecutive factors until a byte budget fills
    OPTIMAL = "optimal"      # merge while the next factor lands inside the startup window


@dataclass(frozen=True)
class FactorTask:
    """One factor-construction task of a pass.

    ``layer_index`` is 1-based.  Input-side factors belong to the forward
    pass, output-side factors to the backward pass.
    """

    layer_index: int
    kind: FactorKind
    dim: int
    compute_time: float

    def __post_init__(self):
        if self.layer_index < 1:
            raise ValueError(f"layer_index must be >= 1, got {self.layer_index}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.compute_time <= 0:
            raise ValueError(f"compute_time must be > 0, got {self.compute_time}")

    @property
    def owner_pass(self) -> str:
        return "forward" if self.kind is FactorKind.A else "backward"

    @property
    def packed_elements(self) -> int:
        return self.dim * (self.dim + 1) // 2


@dataclass(frozen=True)
class FusionPlan:
    """Ordered groups of consecutive factor tasks, communicated one group per
    collective."""

    groups: tuple[tuple[FactorTask, ...], ...]
    policy: FusionPolicy
    threshold_bytes: int | None = None

    def __post_init__(self):
        if not self.groups or any(len(g) == 0 for g in self.groups):
            raise ValueError("fusion plan must contain nonempty groups")

    @property
    def tasks(self) -> tuple[FactorTask, ...]:
        return tuple(t for g in self.groups for t in g)

    def group_elements(self, index: int) -> int:
        return sum(t.packed_elements for t in self.groups[index])

    def to_json(self) -> str:
        payload = {
            "policy": self.policy.value,
            "groups": [[[t.layer_index, t.kind.value] for t in g] for g in self.groups],
        }
        if self.threshold_bytes is not None:
            payload["threshold_bytes"] = self.threshold_bytes
        return json.dumps(payload, indent=2)


@dataclass(frozen=True)
class InvTask:
    """One inversion task: an aggregated factor identified by its position in
    layer order (input factor of layer 1, output factor of layer 1, ...)."""

    tensor_index: int
    dim: int
    layer_index: int
    kind: FactorKind

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.tensor_index < 0:
            raise ValueError(f"tensor_index must be >= 0, got {self.tensor_index}")


@dataclass(frozen=True)
class PlacementPlan:
    """Per-worker ordered inversion sets plus the non-communicated tensor set.

    A CT tensor appears in exactly one worker's list; an NCT tensor appears
    in every worker's list.  ``workers[p]`` preserves the order in which
    worker p should run its inversions.
    """

    tasks: tuple[InvTask, ...]
    workers: tuple[tuple[int, ...], ...]
    nct: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        indices = {t.tensor_index for t in self.tasks}
        if len(indices) != len(self.tasks):
            raise ValueError("duplicate tensor indices")
        seen_ct: set[int] = set()
        for p, assigned in enumerate(self.workers):
            for i in assigned:
                if i not in indices:
                    raise ValueError(f"worker {p} references unknown tensor {i}")
            for i in assigned:
                if i in self.nct:
                    continue
                if i in seen_ct:
                    raise ValueError(f"CT tensor {i} assigned to more than one worker")
                seen_ct.add(i)
        for i in self.nct:
            for p, assigned in enumerate(self.workers):
                if i not in assigned:
                    raise ValueError(f"NCT tensor {i} missing from worker {p}")
        covered = seen_ct | set(self.nct)
        if covered != indices:
            raise ValueError(f"placement does not cover tensors {sorted(indices - covered)}")

    @property
    def world_size(self) -> int:
        return len(self.workers)

    def owner(self, tensor_index: int) -> int:
        """Worker that broadcasts this CT tensor (its only holder)."""
        if tensor_index in self.nct:
            raise ValueError(f"tensor {tensor_index} is NCT and has no single owner")
        for p, assigned in enumerate(self.workers):
            if tensor_index in assigned:
                return p
        raise ValueError(f"tensor {tensor_index} not placed")

    def task_by_index(self, tensor_index: int) -> InvTask:
        for t in self.tasks:
            if t.tensor_index == tensor_index:
                return t
        raise KeyError(tensor_index)

    def to_json(self) -> str:
        return json.dumps(
            {
                "workers": [list(w) for w in self.workers],
                "nct": sorted(self.nct),
                "tensors": [
                    {"index": t.tensor_index, "dim": t.dim, "layer": t.layer_index, "kind": t.kind.value}
                    for t in self.tasks
                ],
            },
            indent=2,
        )


def _check_single_pass(tasks: Sequence[FactorTask]) -> None:
    if not tasks:
        raise ValueError("no factor tasks to plan")
    kinds = {t.kind for t in tasks}
    if len(kinds) > 1:
        raise ValueError("fusion groups never span the forward/backward boundary; plan each pass separately")
    layers = [t.layer_index for t in tasks]
    ascending = all(a < b for a, b in zip(layers, layers[1:]))
    descending = all(a > b for a, b in zip(layers, layers[1:]))
    if tasks[0].kind is FactorKind.A and not ascending:
        raise ValueError("input-side factors must arrive in forward order (layer 1 up)")
    if tasks[0].kind is FactorKind.G and not descending:
        raise ValueError("output-side factors must arrive in backward order (last layer down)")


def _factor_ready_times(tasks: Sequence[FactorTask], pass_times: Sequence[float]) -> list[float]:
    """Completion time of each factor computation on the serial compute lane.

    Forward pass interleaving: factor of layer l, then the layer l forward
    computation, then the next factor.  Backward pass: the layer l backward
    computation, then its factor, then the next layer.
    """
    if len(pass_times) != len(tasks):
        raise ValueError(f"expected {len(tasks)} pass times, got {len(pass_times)}")
    if any(t <= 0 for t in pass_times):
        raise ValueError("pass computation times must be > 0")
    forward = tasks[0].kind is FactorKind.A
    ready: list[float] = []
    clock = 0.0
    for i, task in enumerate(tasks):
        if not forward:
            clock += pass_times[i]
        clock += task.compute_time
        ready.append(clock)
        if forward:
            clock += pass_times[i]
    return ready


def plan_fusion(
    tasks: Sequence[FactorTask],
    pass_times: Sequence[float],
    perf: AllReduceParams,
    policy: FusionPolicy,
    threshold_bytes: int = DEFAULT_FUSION_THRESHOLD_BYTES,
) -> FusionPlan:
    """Group one pass's factor tasks for aggregation.

    ``tasks`` must be in computation order (forward: layer 1 up; backward:
    layer L down) and ``pass_times`` are the per-layer forward or backward
    computation times in the same order.
    """
    _check_single_pass(tasks)
    tasks = tuple(tasks)
    ready = _factor_ready_times(tasks, pass_times)

    if policy is FusionPolicy.NAIVE:
        groups = [list(tasks)]
    elif policy is FusionPolicy.LAYERWISE:
        groups = [[t] for t in tasks]
    elif policy is FusionPolicy.THRESHOLD:
        groups = [[tasks[0]]]
        pending_bytes = tasks[0].packed_elements * BYTES_PER_ELEMENT
        for t in tasks[1:]:
            if pending_bytes >= threshold_bytes:
                groups.append([t])
                pending_bytes = t.packed_elements * BYTES_PER_ELEMENT
            else:
                groups[-1].append(t)
                pending_bytes += t.packed_elements * BYTES_PER_ELEMENT
    elif policy is FusionPolicy.OPTIMAL:
        # Merge task i+1 while it finishes computing before the pending
        # group's communication (starting when its last member is ready)
        # would clear the collective startup latency.  Flush on the first
        # failure of the criterion.
        groups = [[tasks[0]]]
        for i in range(1, len(tasks)):
            if ready[i] < ready[i - 1] + perf.alpha_ar:
                groups[-1].append(tasks[i])
            else:
                groups.append([tasks[i]])
    else:
        raise ValueError(f"unknown fusion policy {policy!r}")

    return FusionPlan(
        groups=tuple(tuple(g) for g in groups),
        policy=policy,
        threshold_bytes=threshold_bytes if policy is FusionPolicy.THRESHOLD else None,
    )


def lbp_place(
    tasks: Sequence[InvTask],
    world_size: int,
    inv: InverseParams,
    bc: BcastParams,
    balance: str = "dim_sq",
) -> PlacementPlan:
    """Load-balancing placement with dynamic CT/NCT classification.

    Tensors are visited in descending dimension (ties by lowest tensor
    index).  A tensor whose estimated inversion is cheaper than its
    broadcast is marked NCT and replicated to every worker; otherwise it
    goes to the worker with the smallest accumulated load (ties to the
    lowest worker index).  ``balance`` selects the bucket increment:
    "dim_sq" tracks d^2 (inversion work grows with the squared dimension),
    "dim" tracks d.

    With a single worker there is nobody to broadcast to, so every tensor
    is NCT.
    """
    if world_size < 1:
        raise ValueError(f"world_size must be >= 1, got {world_size}")
    if not tasks:
        raise ValueError("no inversion tasks to place")
    if balance not in ("dim_sq", "dim"):
        raise ValueError(f"balance must be 'dim_sq' or 'dim', got {balance!r}")

    tasks = tuple(tasks)
    if world_size == 1:
        return PlacementPlan(
            tasks=tasks,
            workers=(tuple(t.tensor_index for t in tasks),),
            nct=frozenset(t.tensor_index for t in tasks),
        )

    order = sorted(range(len(tasks)), key=lambda i: (-tasks[i].dim, tasks[i].tensor_index))
    buckets = [0.0] * world_size
    assigned: list[list[int]] = [[] for _ in range(world_size)]
    nct: set[int] = set()
    for i in order:
        t = tasks[i]
        weight = float(t.dim) ** 2 if balance == "dim_sq" else float(t.dim)
        if inverse_time(t.dim, inv) < bcast_time(t.dim, bc):
            nct.add(t.tensor_index)
            for p in range(world_size):
                assigned[p].append(t.tensor_index)
                buckets[p] += weight
        else:
            p = min(range(world_size), key=lambda q: buckets[q])
            assigned[p].append(t.tensor_index)
            buckets[p] += weight
    return PlacementPlan(
        tasks=tasks,
        workers=tuple(tuple(a) for a in assigned),
        nct=frozenset(nct),
    )


def seq_place(tasks: Sequence[InvTask], world_size: int) -> PlacementPlan:
    """Round-robin placement in layer order; every tensor is communicated.

    Tensor i (0-based, in the given order) goes to worker i mod P.  With
    more workers than tensors, the surplus workers stay idle.
    """
    if world_size < 1:
        raise ValueError(f"world_size must be >= 1, got {world_size}")
    tasks = tuple(tasks)
    assigned: list[list[int]] = [[] for _ in range(world_size)]
    for i, t in enumerate(tasks):
        assigned[i % world_size].append(t.tensor_index)
    nct = frozenset() if world_size > 1 else frozenset(t.tensor_index for t in tasks)
    return PlacementPlan(tasks=tasks, workers=tuple(tuple(a) for a in assigned), nct=nct)


def local_place(tasks: Sequence[InvTask], world_size: int) -> PlacementPlan:
    """No distribution: every worker inverts every tensor, nothing is sent."""
    if world_size < 1:
        raise ValueError(f"world_size must be >= 1, got {world_size}")
    tasks = tuple(tasks)
    all_indices = tuple(t.tensor_index for t in tasks)
    return PlacementPlan(
        tasks=tasks,
        workers=tuple(all_indices for _ in range(world_size)),
        nct=frozenset(all_indices),
    )


def placement_makespan(plan: PlacementPlan, inv: InverseParams, bc: BcastParams) -> float:
    """Worst per-worker time under the placement objective.

    Each worker pays the inversion time of everything in its set plus the
    broadcast time of its communicated tensors; NCT tensors cost compute on
    every worker and no communication.
    """
    dims = {t.tensor_index: t.dim for t in plan.tasks}
    worst = 0.0
    for assigned in plan.workers:
        total = 0.0
        for i in assigned:
            total += inverse_time(dims[i], inv)
            if i not in plan.nct:
                total += bcast_time(dims[i], bc)
        worst = max(worst, total)
    return worst
