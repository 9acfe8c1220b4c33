"""Desk-scale numerical emulation of synchronous multi-worker K-FAC.

Runs the full preconditioned update on a tiny fully-connected network with
P emulated workers in one process: each worker computes its local factors
and gradients, the emulation averages them, damps and inverts the averaged
factors, and applies the preconditioned step.  Because factors are averaged
before inversion, the P-worker step on equal-size local batches reproduces
the single-worker step on the concatenated batch to rounding error; that
equivalence is the correctness anchor for everything the schedulers move
around.

Conventions: the loss is mean squared error averaged over batch and output
dimensions; output-side factors use per-sample loss gradients w.r.t. layer
pre-activations (no batch normalization inside the gradient, the 1/b lives
in the factor average); layers carry no bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .linalg import SymMatrix, compute_factor_A, compute_factor_G, damped_inverse, precondition
from .planner import PlacementPlan

__all__ = [
    "TinyMLP",
    "WorkerBatch",
    "FBResult",
    "forward_backward",
    "dkfac_step",
    "kfac_step_centralized",
    "make_fixture",
    "save_fixture",
    "load_fixture",
    "run_fixture",
]

_ACTIVATIONS = ("identity", "relu")


@dataclass(frozen=True)
class TinyMLP:
    """A bias-free fully-connected stack; weights are d_out x d_in."""

    weights: tuple[np.ndarray, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        if not self.weights:
            raise ValueError("model needs at least one layer")
        if len(self.weights) != len(self.activations):
            raise ValueError("one activation per layer required")
        ws = []
        for i, (w, act) in enumerate(zip(self.weights, self.activations)):
            if act not in _ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {act!r}")
            arr = np.array(w, dtype=np.float64)
            if arr.ndim != 2:
                raise ValueError(f"layer {i}: weight must be 2-D")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"layer {i}: weight has non-finite entries")
            if i > 0 and arr.shape[1] != ws[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i}: input dim {arr.shape[1]} does not chain with previous output {ws[i - 1].shape[0]}"
                )
            arr.flags.writeable = False
            ws.append(arr)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "activations", tuple(self.activations))

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @classmethod
    def random(cls, dims: Sequence[int], activations: Sequence[str], rng: np.random.Generator, scale: float = 0.5):
        if len(activations) != len(dims) - 1:
            raise ValueError("need one activation per layer")
        weights = tuple(scale * rng.standard_normal((dims[i + 1], dims[i])) for i in range(len(dims) - 1))
        return cls(weights=weights, activations=tuple(activations))


@dataclass(frozen=True)
class WorkerBatch:
    """One worker's local samples: inputs are b x d0, targets are b x dL."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.array(self.inputs, dtype=np.float64)
        y = np.array(self.targets, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 2:
            raise ValueError("inputs and targets must be 2-D (batch x features)")
        if x.shape[0] != y.shape[0] or x.shape[0] < 1:
            raise ValueError(f"batch sizes disagree or are empty: {x.shape[0]} vs {y.shape[0]}")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    @property
    def batch_size(self) -> int:
        return self.inputs.shape[0]

    def concat(self, other: "WorkerBatch") -> "WorkerBatch":
        return WorkerBatch(
            inputs=np.concatenate([self.inputs, other.inputs]),
            targets=np.concatenate([self.targets, other.targets]),
        )


@dataclass(frozen=True)
class FBResult:
    """Everything one worker contributes from a forward/backward pass.

    ``layer_inputs[l]`` is the batch of inputs to layer l; ``output_grads[l]``
    holds per-sample loss gradients w.r.t. layer l's pre-activation outputs
    (summed loss convention per sample, so no 1/b inside); ``weight_grads[l]``
    is the gradient of the batch-mean loss.
    """

    loss: float
    layer_inputs: tuple[np.ndarray, ...]
    output_grads: tuple[np.ndarray, ...]
    weight_grads: tuple[np.ndarray, ...]


def _apply_activation(z: np.ndarray, act: str) -> np.ndarray:
    return z if act == "identity" else np.maximum(z, 0.0)


def _activation_grad(z: np.ndarray, act: str) -> np.ndarray:
    return np.ones_like(z) if act == "identity" else (z > 0.0).astype(np.float64)


def model_loss(model: TinyMLP, batch: WorkerBatch) -> float:
    """Mean squared error over batch and output dimensions."""
    a = batch.inputs
    for w, act in zip(model.weights, model.activations):
        a = _apply_activation(a @ w.T, act)
    if a.shape[1] != batch.targets.shape[1]:
        raise ValueError(f"model output dim {a.shape[1]} does not match targets {batch.targets.shape[1]}")
    diff = a - batch.targets
    return float(np.mean(diff * diff))


def forward_backward(model: TinyMLP, batch: WorkerBatch) -> FBResult:
    """One pass through the network, capturing factor statistics and gradients."""
    if batch.inputs.shape[1] != model.dims[0]:
        raise ValueError(f"input dim {batch.inputs.shape[1]} does not match model input {model.dims[0]}")
    if batch.targets.shape[1] != model.dims[-1]:
        raise ValueError(f"target dim {batch.targets.shape[1]} does not match model output {model.dims[-1]}")
    b = batch.batch_size
    d_out = model.dims[-1]

    layer_inputs = []
    pre_acts = []
    a = batch.inputs
    for w, act in zip(model.weights, model.activations):
        layer_inputs.append(a)
        z = a @ w.T
        pre_acts.append(z)
        a = _apply_activation(z, act)

    diff = a - batch.targets
    loss = float(np.mean(diff * diff))
    # Per-sample loss is the mean over output dims of the squared error, so
    # its gradient w.r.t. the network output is 2*(y - t)/d_out.
    grad_out = 2.0 * diff / d_out

    output_grads: list[np.ndarray] = [None] * model.num_layers
    weight_grads: list[np.ndarray] = [None] * model.num_layers
    upstream = grad_out
    for l in range(model.num_layers - 1, -1, -1):
        g = upstream * _activation_grad(pre_acts[l], model.activations[l])
        output_grads[l] = g
        weight_grads[l] = (g.T @ layer_inputs[l]) / b
        if l > 0:
            upstream = g @ model.weights[l]

    return FBResult(
        loss=loss,
        layer_inputs=tuple(layer_inputs),
        output_grads=tuple(output_grads),
        weight_grads=tuple(weight_grads),
    )


def _mean_sym(mats: Sequence[SymMatrix]) -> SymMatrix:
    return SymMatrix(np.mean([m.values for m in mats], axis=0))


def _apply_update(model: TinyMLP, inverses: dict[tuple[str, int], SymMatrix], grads, alpha: float) -> TinyMLP:
    new_weights = []
    for l in range(model.num_layers):
        step = precondition(grads[l], inverses[("A", l)], inverses[("G", l)])
        new_weights.append(model.weights[l] - alpha * step)
    return TinyMLP(weights=tuple(new_weights), activations=model.activations)


def dkfac_step(
    model: TinyMLP,
    worker_batches: Sequence[WorkerBatch],
    gamma: float,
    alpha: float,
    placement: PlacementPlan | None = None,
) -> TinyMLP:
    """One synchronous P-worker step: aggregate factors, invert once, update.

    All workers must carry the same batch size; the averaged factors then
    equal the factors of the concatenated batch, which is what makes the
    result independent of P.  ``placement`` optionally routes the inversion
    work through a plan (as the schedulers would distribute it); it changes
    which emulated worker computes each inverse, never the numbers, and the
    tensor order must be input/output factor per layer.
    """
    if not worker_batches:
        raise ValueError("need at least one worker batch")
    sizes = {wb.batch_size for wb in worker_batches}
    if len(sizes) != 1:
        raise ValueError(
            f"per-worker batch sizes must be equal for the aggregated step, got {sorted(sizes)}"
        )
    results = [forward_backward(model, wb) for wb in worker_batches]

    averaged: dict[tuple[str, int], SymMatrix] = {}
    grads = []
    for l in range(model.num_layers):
        averaged[("A", l)] = _mean_sym([compute_factor_A(r.layer_inputs[l]) for r in results])
        averaged[("G", l)] = _mean_sym([compute_factor_G(r.output_grads[l]) for r in results])
        grads.append(np.mean([r.weight_grads[l] for r in results], axis=0))

    tensor_order = [("A", 0), ("G", 0)]
    for l in range(1, model.num_layers):
        tensor_order += [("A", l), ("G", l)]

    inverses: dict[tuple[str, int], SymMatrix] = {}
    if placement is None:
        for key in tensor_order:
            inverses[key] = damped_inverse(averaged[key], gamma)
    else:
        if len(placement.tasks) != len(tensor_order):
            raise ValueError(
                f"placement covers {len(placement.tasks)} tensors, model has {len(tensor_order)}"
            )
        # Walk the plan worker by worker, as the cluster would; each tensor's
        # inverse is computed by whoever holds it first and shared from there.
        for assigned in placement.workers:
            for idx in assigned:
                key = tensor_order[idx]
                if key not in inverses:
                    inverses[key] = damped_inverse(averaged[key], gamma)
    return _apply_update(model, inverses, grads, alpha)


def kfac_step_centralized(model: TinyMLP, batch: WorkerBatch, gamma: float, alpha: float) -> TinyMLP:
    """The single-worker preconditioned step; the oracle for the P-worker one."""
    r = forward_backward(model, batch)
    new_weights = []
    for l in range(model.num_layers):
        a_inv = damped_inverse(compute_factor_A(r.layer_inputs[l]), gamma)
        g_inv = damped_inverse(compute_factor_G(r.output_grads[l]), gamma)
        step = precondition(r.weight_grads[l], a_inv, g_inv)
        new_weights.append(model.weights[l] - alpha * step)
    return TinyMLP(weights=tuple(new_weights), activations=model.activations)


# --- regression fixtures ------------------------------------------------------


def make_fixture(seed: int, workers: int, dims: Sequence[int] | None = None, batch_per_worker: int = 6) -> dict:
    """Build a random fixture whose expected weights come from the
    centralized step on the union batch."""
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    rng = np.random.default_rng(seed)
    if dims is None:
        dims = [int(rng.integers(2, 7)) for _ in range(int(rng.integers(2, 5)))]
    if len(dims) < 2:
        raise ValueError("dims must describe at least one layer")
    activations = ["relu" if rng.random() < 0.5 else "identity" for _ in range(len(dims) - 2)]
    activations.append("identity")  # linear output layer keeps targets reachable
    model = TinyMLP.random(dims, activations, rng)
    batches = [
        WorkerBatch(
            inputs=rng.standard_normal((batch_per_worker, dims[0])),
            targets=rng.standard_normal((batch_per_worker, dims[-1])),
        )
        for _ in range(workers)
    ]
    gamma = float(rng.uniform(0.05, 0.3))
    alpha = float(rng.uniform(0.05, 0.2))
    union = batches[0]
    for wb in batches[1:]:
        union = union.concat(wb)
    expected = kfac_step_centralized(model, union, gamma, alpha)
    return {
        "dims": list(dims),
        "activations": list(activations),
        "weights": [w.tolist() for w in model.weights],
        "worker_inputs": [wb.inputs.tolist() for wb in batches],
        "worker_targets": [wb.targets.tolist() for wb in batches],
        "gamma": gamma,
        "alpha": alpha,
        "expected_weights": [w.tolist() for w in expected.weights],
    }


def save_fixture(path, fixture: dict) -> None:
    Path(path).write_text(json.dumps(fixture, indent=2) + "\n")


def load_fixture(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def run_fixture(fixture: dict, placement: PlacementPlan | None = None) -> float:
    """Run the aggregated multi-worker step and report the max deviation from
    the fixture's centralized-oracle weights."""
    model = TinyMLP(
        weights=tuple(np.array(w) for w in fixture["weights"]),
        activations=tuple(fixture["activations"]),
    )
    batches = [
        WorkerBatch(inputs=np.array(x), targets=np.array(t))
        for x, t in zip(fixture["worker_inputs"], fixture["worker_targets"])
    ]
    stepped = dkfac_step(model, batches, fixture["gamma"], fixture["alpha"], placement=placement)
    deviation = 0.0
    for got, want in zip(stepped.weights, fixture["expected_weights"]):
        deviation = max(deviation, float(np.max(np.abs(got - np.array(want)))))
    return deviation
