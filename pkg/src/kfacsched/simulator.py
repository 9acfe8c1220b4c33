"""Deterministic discrete-event simulation of one distributed K-FAC iteration.

The model is a homogeneous cluster reduced to one representative worker with
two serial resources: a compute stream and a communication stream.
Collective costs come from the fitted performance models, so the worker
count enters through the calibration rather than as an explicit lane per
worker.  One iteration unfolds as:

* forward pass: for each layer, construct the input-side factor, then run
  the layer's forward computation;
* backward pass: run the layer's backward computation, then construct the
  output-side factor; the layer's gradient all-reduce may start as soon as
  its backward computation finishes (wait-free backpropagation);
* factor aggregation: fused factor groups all-reduce on the comm stream.
  Pipelined schemes start a group as soon as its members are computed;
  non-pipelined schemes hold all factor traffic until the passes finish;
* inversion: once aggregation completes, every worker inverts its assigned
  tensors serially; each communicated tensor's broadcast (packed upper
  triangle) enqueues on the shared comm stream when its inversion ends.
  The representative compute lane is the most loaded worker's.

Timelines are immutable; identical inputs produce identical timelines.
Per-category breakdowns count communication only where it is not hidden
behind compute.
"""

from __future__ import annotations

import enum
import io
import csv as _csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .perfmodel import PerfParams, allreduce_time, bcast_time, inverse_time
from .planner import (
    DEFAULT_FUSION_THRESHOLD_BYTES,
    FactorKind,
    FactorTask,
    FusionPlan,
    FusionPolicy,
    InvTask,
    PlacementPlan,
    lbp_place,
    local_place,
    plan_fusion,
    seq_place,
)
from .profiles import ModelProfile

__all__ = [
    "Scheme",
    "SchemeConfig",
    "Category",
    "Resource",
    "SimEvent",
    "Timeline",
    "IterationPlans",
    "build_plans",
    "factor_tasks",
    "inverse_tasks",
    "simulate_iteration",
    "breakdown",
    "compare_schemes",
    "validate_timeline",
    "TimelineValidationError",
    "timeline_to_csv",
    "breakdown_to_csv",
    "comparison_to_csv",
    "CATEGORY_ORDER",
]


class Scheme(enum.Enum):
    DKFAC = "dkfac"       # aggregate factors, invert everything locally
    MPDKFAC = "mpdkfac"   # sequential inverse placement, deferred factor traffic
    SPDKFAC = "spdkfac"   # pipelined fused factor traffic + load-balanced placement


class Category(enum.Enum):
    FFBP = "FFBP"
    GRAD_COMM = "GradComm"
    FACTOR_COMP = "FactorComp"
    FACTOR_COMM = "FactorComm"
    INVERSE_COMP = "InverseComp"
    INVERSE_COMM = "InverseComm"


CATEGORY_ORDER = (
    Category.FFBP,
    Category.GRAD_COMM,
    Category.FACTOR_COMP,
    Category.FACTOR_COMM,
    Category.INVERSE_COMP,
    Category.INVERSE_COMM,
)

_COMPUTE_CATEGORIES = {Category.FFBP, Category.FACTOR_COMP, Category.INVERSE_COMP}


class Resource(enum.Enum):
    COMPUTE = "compute"
    COMM = "comm"


_PLACEMENT_MODES = ("none", "seq", "lbp")


@dataclass(frozen=True)
class SchemeConfig:
    """Which optimizations a simulated training scheme runs with.

    ``placement_mode`` selects who inverts what: "none" keeps every
    inversion local on all workers, "seq" distributes round-robin, "lbp"
    runs the load-balancing placement.  ``overlap_factor_comm`` lets fused
    factor groups start communicating as soon as their members exist; when
    off, all factor traffic waits for the end of the backward pass.
    Gradient all-reduces are always per layer (no gradient fusion).
    """

    scheme: Scheme
    world_size: int
    fusion_policy: FusionPolicy
    placement_mode: str
    overlap_factor_comm: bool
    kfac_update_interval: int = 1
    fusion_threshold_bytes: int = DEFAULT_FUSION_THRESHOLD_BYTES
    placement_balance: str = "dim_sq"
    label: str | None = None

    def __post_init__(self):
        if self.world_size < 1:
            raise ValueError(f"world_size must be >= 1, got {self.world_size}")
        if self.kfac_update_interval < 1:
            raise ValueError(f"kfac_update_interval must be >= 1, got {self.kfac_update_interval}")
        if self.placement_mode not in _PLACEMENT_MODES:
            raise ValueError(f"placement_mode must be one of {_PLACEMENT_MODES}, got {self.placement_mode!r}")
        if self.scheme is Scheme.DKFAC and self.placement_mode != "none":
            raise ValueError("the local-inversion scheme computes every inverse on every worker; placement must be 'none'")

    @property
    def display_label(self) -> str:
        return self.label if self.label is not None else self.scheme.value

    @classmethod
    def dkfac(cls, world_size: int, **kw) -> "SchemeConfig":
        return cls(
            scheme=Scheme.DKFAC,
            world_size=world_size,
            fusion_policy=FusionPolicy.NAIVE,
            placement_mode="none",
            overlap_factor_comm=False,
            **kw,
        )

    @classmethod
    def mpdkfac(cls, world_size: int, overlap_factor_comm: bool = False, **kw) -> "SchemeConfig":
        return cls(
            scheme=Scheme.MPDKFAC,
            world_size=world_size,
            fusion_policy=FusionPolicy.NAIVE,
            placement_mode="seq",
            overlap_factor_comm=overlap_factor_comm,
            **kw,
        )

    @classmethod
    def spdkfac(cls, world_size: int, fusion_policy: FusionPolicy = FusionPolicy.OPTIMAL, **kw) -> "SchemeConfig":
        return cls(
            scheme=Scheme.SPDKFAC,
            world_size=world_size,
            fusion_policy=fusion_policy,
            placement_mode="lbp",
            overlap_factor_comm=True,
            **kw,
        )

    @classmethod
    def for_scheme(cls, scheme: Scheme, world_size: int, **kw) -> "SchemeConfig":
        factory = {Scheme.DKFAC: cls.dkfac, Scheme.MPDKFAC: cls.mpdkfac, Scheme.SPDKFAC: cls.spdkfac}
        return factory[scheme](world_size, **kw)

    @classmethod
    def ablation(cls, pipe: bool, lbp: bool, world_size: int) -> "SchemeConfig":
        """Toggle the two optimizations independently on the full scheme."""
        return cls(
            scheme=Scheme.SPDKFAC,
            world_size=world_size,
            fusion_policy=FusionPolicy.OPTIMAL if pipe else FusionPolicy.NAIVE,
            placement_mode="lbp" if lbp else "seq",
            overlap_factor_comm=pipe,
            label=f"{'+' if pipe else '-'}Pipe{'+' if lbp else '-'}LBP",
        )


@dataclass(frozen=True)
class SimEvent:
    name: str
    category: Category
    resource: Resource
    start: float
    end: float
    layer: int | None = None
    kind: str | None = None
    members: tuple[tuple[str, int], ...] = ()
    tensor: int | None = None

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError(f"event {self.name!r} must have end > start, got [{self.start}, {self.end}]")
        if (self.category in _COMPUTE_CATEGORIES) != (self.resource is Resource.COMPUTE):
            raise ValueError(f"event {self.name!r}: category {self.category} mismatches resource {self.resource}")

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def layer_label(self) -> str:
        if self.tensor is not None:
            return f"T{self.tensor}"
        if self.members:
            first, last = self.members[0], self.members[-1]
            if first == last:
                return f"{first[0]}{first[1]}"
            return f"{first[0]}{first[1]}:{last[0]}{last[1]}"
        return str(self.layer) if self.layer is not None else ""


@dataclass(frozen=True)
class Timeline:
    """One simulated iteration: ordered events plus phase metadata.

    ``worker_lanes`` records every worker's serial inversion schedule as
    (tensor_index, start, end) triples; the representative worker's lane is
    the one rendered as compute events.
    """

    events: tuple[SimEvent, ...]
    total_time: float
    inverse_start: float | None = None
    worker_lanes: tuple[tuple[tuple[int, float, float], ...], ...] = ()
    representative_worker: int | None = None

    @property
    def breakdown(self) -> dict[Category, float]:
        return breakdown(self)

    @property
    def inverse_phase_seconds(self) -> float:
        if self.inverse_start is None:
            return 0.0
        return self.total_time - self.inverse_start


@dataclass(frozen=True)
class IterationPlans:
    forward_fusion: FusionPlan
    backward_fusion: FusionPlan
    placement: PlacementPlan


def factor_tasks(profile: ModelProfile, kind: FactorKind) -> list[FactorTask]:
    """Factor-construction tasks of one pass, in computation order."""
    if kind is FactorKind.A:
        return [
            FactorTask(layer_index=l, kind=kind, dim=layer.a_dim, compute_time=layer.t_factorA)
            for l, layer in enumerate(profile.layers, start=1)
        ]
    return [
        FactorTask(layer_index=l, kind=kind, dim=profile.layers[l - 1].g_dim, compute_time=profile.layers[l - 1].t_factorG)
        for l in range(profile.num_layers, 0, -1)
    ]


def inverse_tasks(profile: ModelProfile) -> list[InvTask]:
    """The 2L inversion tasks in layer order: input factor, then output factor."""
    tasks = []
    for l, layer in enumerate(profile.layers, start=1):
        tasks.append(InvTask(tensor_index=len(tasks), dim=layer.a_dim, layer_index=l, kind=FactorKind.A))
        tasks.append(InvTask(tensor_index=len(tasks), dim=layer.g_dim, layer_index=l, kind=FactorKind.G))
    return tasks


def build_plans(profile: ModelProfile, cfg: SchemeConfig, perf: PerfParams) -> IterationPlans:
    fwd = plan_fusion(
        factor_tasks(profile, FactorKind.A),
        [layer.t_ff for layer in profile.layers],
        perf.allreduce,
        cfg.fusion_policy,
        threshold_bytes=cfg.fusion_threshold_bytes,
    )
    bwd = plan_fusion(
        factor_tasks(profile, FactorKind.G),
        [layer.t_bp for layer in reversed(profile.layers)],
        perf.allreduce,
        cfg.fusion_policy,
        threshold_bytes=cfg.fusion_threshold_bytes,
    )
    tasks = inverse_tasks(profile)
    if cfg.placement_mode == "none":
        placement = local_place(tasks, cfg.world_size)
    elif cfg.placement_mode == "seq":
        placement = seq_place(tasks, cfg.world_size)
    else:
        placement = lbp_place(tasks, cfg.world_size, perf.inverse, perf.bcast, balance=cfg.placement_balance)
    return IterationPlans(forward_fusion=fwd, backward_fusion=bwd, placement=placement)


def _check_plans(profile: ModelProfile, cfg: SchemeConfig, plans: IterationPlans) -> None:
    if plans.placement.world_size != cfg.world_size:
        raise ValueError(
            f"placement plan is for {plans.placement.world_size} workers, config says {cfg.world_size}"
        )
    want_fwd = [(t.kind, t.layer_index, t.dim) for t in factor_tasks(profile, FactorKind.A)]
    got_fwd = [(t.kind, t.layer_index, t.dim) for t in plans.forward_fusion.tasks]
    if got_fwd != want_fwd:
        raise ValueError("forward fusion plan does not cover the profile's factor tasks in order")
    want_bwd = [(t.kind, t.layer_index, t.dim) for t in factor_tasks(profile, FactorKind.G)]
    got_bwd = [(t.kind, t.layer_index, t.dim) for t in plans.backward_fusion.tasks]
    if got_bwd != want_bwd:
        raise ValueError("backward fusion plan does not cover the profile's factor tasks in order")
    want_inv = [(t.tensor_index, t.dim) for t in inverse_tasks(profile)]
    got_inv = sorted((t.tensor_index, t.dim) for t in plans.placement.tasks)
    if got_inv != want_inv:
        raise ValueError("placement plan references tensors that do not match the profile")


@dataclass
class _CommJob:
    ready: float
    seq: int
    name: str
    category: Category
    duration: float
    layer: int | None = None
    members: tuple[tuple[str, int], ...] = ()
    tensor: int | None = None
    end: float = field(default=0.0, init=False)


def _run_comm(jobs: list[_CommJob], events: list[SimEvent], busy: float) -> float:
    """Serve jobs FIFO by arrival time on the single comm stream."""
    for job in sorted(jobs, key=lambda j: (j.ready, j.seq)):
        start = max(busy, job.ready)
        job.end = start + job.duration
        busy = job.end
        if job.end > start:  # zero-width slots (incl. float-absorbed ones) leave no event
            events.append(
                SimEvent(
                    name=job.name,
                    category=job.category,
                    resource=Resource.COMM,
                    start=start,
                    end=job.end,
                    layer=job.layer,
                    members=job.members,
                    tensor=job.tensor,
                )
            )
    return busy


def simulate_iteration(
    profile: ModelProfile,
    cfg: SchemeConfig,
    perf: PerfParams,
    plans: IterationPlans | None = None,
    iteration: int = 0,
) -> Timeline:
    """Simulate one iteration and return its timeline.

    ``iteration`` only matters with a curvature-update interval above one:
    off-interval iterations skip factor construction, aggregation, and
    inversion entirely and reduce to forward/backward plus gradient traffic.
    """
    kfac_active = iteration % cfg.kfac_update_interval == 0
    if plans is None:
        plans = build_plans(profile, cfg, perf) if kfac_active else None
    elif kfac_active:
        _check_plans(profile, cfg, plans)

    events: list[SimEvent] = []
    clock = 0.0
    comp_end_a: dict[int, float] = {}
    comp_end_g: dict[int, float] = {}
    bp_end: dict[int, float] = {}

    def run_compute(name: str, category: Category, duration: float, **refs) -> None:
        nonlocal clock
        events.append(
            SimEvent(name=name, category=category, resource=Resource.COMPUTE, start=clock, end=clock + duration, **refs)
        )
        clock += duration

    for l, layer in enumerate(profile.layers, start=1):
        if kfac_active:
            run_compute(f"factor_comp[A{l}]", Category.FACTOR_COMP, layer.t_factorA, layer=l, kind="A")
            comp_end_a[l] = clock
        run_compute(f"ff[{l}]", Category.FFBP, layer.t_ff, layer=l)
    for l in range(profile.num_layers, 0, -1):
        layer = profile.layers[l - 1]
        run_compute(f"bp[{l}]", Category.FFBP, layer.t_bp, layer=l)
        bp_end[l] = clock
        if kfac_active:
            run_compute(f"factor_comp[G{l}]", Category.FACTOR_COMP, layer.t_factorG, layer=l, kind="G")
            comp_end_g[l] = clock
    compute_block_end = clock

    jobs: list[_CommJob] = []
    seq = 0
    for l in range(profile.num_layers, 0, -1):
        jobs.append(
            _CommJob(
                ready=bp_end[l],
                seq=seq,
                name=f"grad_comm[{l}]",
                category=Category.GRAD_COMM,
                duration=allreduce_time(profile.layers[l - 1].grad_elements, perf.allreduce),
                layer=l,
            )
        )
        seq += 1
    factor_jobs: list[_CommJob] = []
    if kfac_active:
        for plan, ends in ((plans.forward_fusion, comp_end_a), (plans.backward_fusion, comp_end_g)):
            for group in plan.groups:
                ready = max(ends[t.layer_index] for t in group)
                if not cfg.overlap_factor_comm:
                    ready = max(ready, compute_block_end)
                members = tuple((t.kind.value, t.layer_index) for t in group)
                head, tail = members[0], members[-1]
                span = f"{head[0]}{head[1]}" if head == tail else f"{head[0]}{head[1]}:{tail[0]}{tail[1]}"
                job = _CommJob(
                    ready=ready,
                    seq=seq,
                    name=f"factor_comm[{span}]",
                    category=Category.FACTOR_COMM,
                    duration=allreduce_time(sum(t.packed_elements for t in group), perf.allreduce),
                    members=members,
                )
                jobs.append(job)
                factor_jobs.append(job)
                seq += 1

    comm_busy = _run_comm(jobs, events, busy=0.0)

    inverse_start: float | None = None
    worker_lanes: tuple = ()
    rep: int | None = None
    if kfac_active:
        factor_agg_done = max(job.end for job in factor_jobs)
        inverse_start = max(compute_block_end, factor_agg_done)
        placement = plans.placement
        dims = {t.tensor_index: t.dim for t in placement.tasks}
        lanes: list[list[tuple[int, float, float]]] = []
        for assigned in placement.workers:
            t0 = inverse_start
            lane = []
            for idx in assigned:
                dur = inverse_time(dims[idx], perf.inverse)
                lane.append((idx, t0, t0 + dur))
                t0 += dur
            lanes.append(lane)
        lane_end = [lane[-1][2] if lane else inverse_start for lane in lanes]
        rep = lane_end.index(max(lane_end))  # first worker attaining the max load
        for idx, start, end in lanes[rep]:
            events.append(
                SimEvent(
                    name=f"inverse_comp[T{idx}]",
                    category=Category.INVERSE_COMP,
                    resource=Resource.COMPUTE,
                    start=start,
                    end=end,
                    tensor=idx,
                )
            )
        bjobs: list[_CommJob] = []
        for p, lane in enumerate(lanes):
            for idx, _start, end in lane:
                if idx in placement.nct:
                    continue
                bjobs.append(
                    _CommJob(
                        ready=end,
                        seq=seq,
                        name=f"inverse_comm[T{idx}]",
                        category=Category.INVERSE_COMM,
                        duration=bcast_time(dims[idx], perf.bcast),
                        tensor=idx,
                    )
                )
                seq += 1
        _run_comm(bjobs, events, busy=comm_busy)
        worker_lanes = tuple(tuple(lane) for lane in lanes)

    total = max(ev.end for ev in events)
    ordered = tuple(sorted(events, key=lambda e: (e.start, e.end, e.resource.value, e.name)))
    return Timeline(
        events=ordered,
        total_time=total,
        inverse_start=inverse_start,
        worker_lanes=worker_lanes,
        representative_worker=rep,
    )


def _merge_intervals(spans: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    merged: list[tuple[float, float]] = []
    for start, end in sorted(spans):
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return merged


def _overlap(start: float, end: float, intervals: Sequence[tuple[float, float]]) -> float:
    covered = 0.0
    for a, b in intervals:
        if b <= start:
            continue
        if a >= end:
            break
        covered += min(end, b) - max(start, a)
    return covered


def breakdown(timeline: Timeline) -> dict[Category, float]:
    """Per-category seconds; communication counts only its non-overlapped part.

    The six categories partition the iteration, so they sum to the total
    time (up to float rounding).
    """
    totals = {cat: 0.0 for cat in CATEGORY_ORDER}
    compute_spans = _merge_intervals(
        (ev.start, ev.end) for ev in timeline.events if ev.resource is Resource.COMPUTE
    )
    for ev in timeline.events:
        if ev.resource is Resource.COMPUTE:
            totals[ev.category] += ev.duration
        else:
            totals[ev.category] += ev.duration - _overlap(ev.start, ev.end, compute_spans)
    return totals


class TimelineValidationError(AssertionError):
    pass


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise TimelineValidationError(message)


def validate_timeline(timeline: Timeline, tol: float = 1e-12) -> None:
    """Post-hoc structural checks on a simulated timeline.

    Verifies serialization per resource, the ordering constraints between
    passes, factor work, gradient traffic, and the inversion phase, and
    that the breakdown partitions the full iteration.
    """
    events = timeline.events
    _require(len(events) > 0, "timeline has no events")
    for resource in Resource:
        spans = sorted((ev.start, ev.end) for ev in events if ev.resource is resource)
        for (s0, e0), (s1, e1) in zip(spans, spans[1:]):
            _require(s1 >= e0 - tol, f"overlapping {resource.value} events at t={s1}")

    ff = {ev.layer: ev for ev in events if ev.name.startswith("ff[")}
    bp = {ev.layer: ev for ev in events if ev.name.startswith("bp[")}
    comp_a = {ev.layer: ev for ev in events if ev.kind == "A" and ev.category is Category.FACTOR_COMP}
    comp_g = {ev.layer: ev for ev in events if ev.kind == "G" and ev.category is Category.FACTOR_COMP}
    layer_count = len(ff)
    _require(layer_count == len(bp) and layer_count >= 1, "forward/backward event mismatch")

    for l in range(1, layer_count + 1):
        if l > 1:
            _require(ff[l].start >= ff[l - 1].end - tol, f"forward order broken at layer {l}")
            _require(bp[l - 1].start >= bp[l].end - tol, f"backward order broken at layer {l - 1}")
        if comp_a:
            _require(comp_a[l].end <= ff[l].start + tol, f"input factor of layer {l} not before its forward step")
        if comp_g:
            _require(comp_g[l].start >= bp[l].end - tol, f"output factor of layer {l} not after its backward step")
    _require(bp[layer_count].start >= ff[layer_count].end - tol, "backward pass started before forward finished")

    comp_end = {("A", l): ev.end for l, ev in comp_a.items()}
    comp_end.update({("G", l): ev.end for l, ev in comp_g.items()})
    for ev in events:
        if ev.category is Category.FACTOR_COMM:
            for kind, l in ev.members:
                _require(
                    ev.start >= comp_end[(kind, l)] - tol,
                    f"{ev.name} started before factor {kind}{l} was computed",
                )
        elif ev.category is Category.GRAD_COMM:
            _require(ev.start >= bp[ev.layer].end - tol, f"{ev.name} started before its backward step")

    factor_comm_end = [ev.end for ev in events if ev.category is Category.FACTOR_COMM]
    inverse_events = [ev for ev in events if ev.category is Category.INVERSE_COMP]
    if inverse_events:
        agg_done = max(factor_comm_end) if factor_comm_end else max(comp_end.values())
        for ev in inverse_events:
            _require(ev.start >= agg_done - tol, f"{ev.name} started before factor aggregation finished")
        _require(timeline.inverse_start is not None, "inversion events without a recorded phase start")
        lane_ends = {}
        for lane in timeline.worker_lanes:
            prev = timeline.inverse_start
            for idx, start, end in lane:
                _require(start >= prev - tol, f"worker lane overlaps on tensor {idx}")
                prev = end
                lane_ends[idx] = max(lane_ends.get(idx, 0.0), end)
        for ev in events:
            if ev.category is Category.INVERSE_COMM:
                _require(
                    ev.start >= lane_ends[ev.tensor] - tol,
                    f"{ev.name} started before its inversion finished",
                )

    _require(abs(timeline.total_time - max(ev.end for ev in events)) <= tol, "total_time is not the last event end")
    totals = breakdown(timeline)
    span = sum(totals.values())
    _require(
        abs(span - timeline.total_time) <= max(tol, 1e-12 * max(1.0, timeline.total_time)),
        f"breakdown sums to {span}, expected {timeline.total_time}",
    )


@dataclass(frozen=True)
class ComparisonRow:
    label: str
    total_time: float
    sp1: float | None  # speedup versus the local-inversion scheme
    sp2: float | None  # speedup versus the sequential-placement scheme


def compare_schemes(
    profile: ModelProfile,
    perf: PerfParams,
    schemes: Sequence[SchemeConfig | Scheme],
    world_size: int | None = None,
) -> list[ComparisonRow]:
    """Simulate several schemes on one profile and tabulate speedups."""
    if len(schemes) < 2:
        raise ValueError("need at least two schemes to compare")
    configs = []
    for s in schemes:
        if isinstance(s, Scheme):
            configs.append(SchemeConfig.for_scheme(s, world_size or perf.fitted_world_size))
        else:
            configs.append(s)
    totals = [simulate_iteration(profile, cfg, perf).total_time for cfg in configs]
    base1 = next((t for cfg, t in zip(configs, totals) if cfg.scheme is Scheme.DKFAC), None)
    base2 = next((t for cfg, t in zip(configs, totals) if cfg.scheme is Scheme.MPDKFAC), None)
    return [
        ComparisonRow(
            label=cfg.display_label,
            total_time=t,
            sp1=None if base1 is None else base1 / t,
            sp2=None if base2 is None else base2 / t,
        )
        for cfg, t in zip(configs, totals)
    ]


# --- CSV export -------------------------------------------------------------


def _fmt(seconds: float) -> str:
    return f"{seconds:.9f}"


def timeline_to_csv(timeline: Timeline) -> str:
    out = io.StringIO()
    writer = _csv.writer(out, lineterminator="\n")
    writer.writerow(["event", "category", "resource", "start", "end", "layer"])
    for ev in timeline.events:
        writer.writerow([ev.name, ev.category.value, ev.resource.value, _fmt(ev.start), _fmt(ev.end), ev.layer_label])
    return out.getvalue()


def breakdown_to_csv(totals: dict[Category, float]) -> str:
    out = io.StringIO()
    writer = _csv.writer(out, lineterminator="\n")
    writer.writerow(["category", "seconds"])
    for cat in CATEGORY_ORDER:
        writer.writerow([cat.value, _fmt(totals.get(cat, 0.0))])
    return out.getvalue()


def comparison_to_csv(rows: Sequence[ComparisonRow]) -> str:
    out = io.StringIO()
    writer = _csv.writer(out, lineterminator="\n")
    writer.writerow(["scheme", "time", "SP1", "SP2"])
    for row in rows:
        writer.writerow(
            [
                row.label,
                _fmt(row.total_time),
                "" if row.sp1 is None else f"{row.sp1:.6f}",
                "" if row.sp2 is None else f"{row.sp2:.6f}",
            ]
        )
    return out.getvalue()
