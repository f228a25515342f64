"""Per-weight task ownership, ratio pruning, and trainability masks.

Every weight of every regularized transform carries a label: the id of
the task that owns it, or FREE.  A task's learn cycle claims all FREE
weights, prunes the least useful fraction back to FREE (zeroing them),
and freezes the rest under that task's label.  Inference for task j
multiplies weights owned by later tasks (and FREE ones) by zero, so a
stored task's predictions never depend on anything learned afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FREE = 0xFFFF  # u16 sentinel; compares greater than any real task id


@dataclass
class PruneSchedule:
    """Fraction of a task's candidate weights freed after its initial phase."""

    first_task_fraction: float = 0.40
    later_fraction: float = 0.75

    def __post_init__(self):
        for f in (self.first_task_fraction, self.later_fraction):
            if not 0.0 < f < 1.0:
                raise ValueError(f"prune fraction must lie in (0, 1), got {f}")

    def fraction_for(self, task_k: int) -> float:
        return self.first_task_fraction if task_k == 1 else self.later_fraction


@dataclass
class PruneRecord:
    """Outcome of pruning one matrix for one task."""

    task: int
    matrix: str
    candidates: int
    freed: int
    fraction: float


@dataclass
class OwnershipMap:
    """Labels per weight for every regularized matrix, plus the prune log."""

    labels: dict[str, np.ndarray]
    tasks_completed: int = 0
    prune_log: list[PruneRecord] = field(default_factory=list)

    @classmethod
    def for_shapes(cls, shapes: dict[str, tuple[int, ...]]) -> "OwnershipMap":
        return cls({name: np.full(shape, FREE, dtype=np.uint16) for name, shape in shapes.items()})

    def labels_for(self, name: str) -> np.ndarray:
        return self.labels[name]

    def claim_free(self, task_k: int) -> None:
        """Assign every FREE weight to task_k (start of its prune step)."""
        for arr in self.labels.values():
            arr[arr == FREE] = task_k

    def complete_task(self, task_k: int) -> None:
        if task_k != self.tasks_completed + 1:
            raise ValueError(
                f"task {task_k} completed out of order (done so far: {self.tasks_completed})"
            )
        self.tasks_completed = task_k

    def counts(self, name: str) -> dict[int, int]:
        values, freq = np.unique(self.labels[name], return_counts=True)
        return {int(v): int(c) for v, c in zip(values, freq)}


def prune_current_task(m, owner: OwnershipMap, task_k: int, fraction: float) -> int:
    """Free the fraction of task_k's weights with smallest |phi| / sigma.

    Freed entries get phi = 0 and label FREE; ties on the ratio free the
    smaller flat index first.  Returns the freed count,
    floor(fraction * candidates).
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"prune fraction must lie in (0, 1), got {fraction}")
    labels = owner.labels_for(m.name)
    cand_flat = np.flatnonzero(labels.ravel() == task_k)
    if cand_flat.size == 0:
        raise ValueError(f"{m.name}: no weights owned by task {task_k} to prune")
    sigma_rows = np.exp(m.rho)[:, None]
    ratio = (np.abs(m.phi) / sigma_rows).ravel()[cand_flat]
    n_freed = math.floor(fraction * cand_flat.size)
    order = np.argsort(ratio, kind="stable")  # stable: ties keep flat-index order
    freed_flat = cand_flat[order[:n_freed]]
    m.phi.ravel()[freed_flat] = 0.0
    labels.ravel()[freed_flat] = FREE
    owner.prune_log.append(
        PruneRecord(task_k, m.name, int(cand_flat.size), int(n_freed), float(fraction))
    )
    return int(n_freed)


def trainable_mask(
    owner: OwnershipMap,
    phase: str,
    task_k: int,
    freeze_preserved: bool = False,
) -> dict[str, np.ndarray]:
    """Boolean trainability per weight for one phase of task_k.

    Initial phase: FREE weights and weights of earlier tasks train (the
    latter under the uncertainty regularizers); with freeze_preserved
    only FREE weights train.  Retrain phase: only task_k's weights.
    """
    if phase not in ("initial", "retrain"):
        raise ValueError(f"phase must be 'initial' or 'retrain', got {phase!r}")
    masks = {}
    for name, labels in owner.labels.items():
        if phase == "initial":
            if freeze_preserved:
                masks[name] = labels == FREE
            else:
                masks[name] = (labels == FREE) | (labels < task_k)
        else:
            masks[name] = labels == task_k
    return masks


def inference_mask(owner: OwnershipMap, task_j: int) -> dict[str, np.ndarray]:
    """Binary masks keeping only weights owned by tasks 1..task_j."""
    if task_j < 1 or task_j > owner.tasks_completed:
        raise ValueError(
            f"task {task_j} outside trained range 1..{owner.tasks_completed}"
        )
    return {
        name: (labels <= task_j).astype(np.float32)
        for name, labels in owner.labels.items()
    }


def partition_check(
    owner: OwnershipMap, k_tasks: int, schedule: PruneSchedule | None = None
) -> list[str]:
    """Verify the ownership partition against the recorded prune outcomes.

    Returns a list of violation strings (empty means the check passed):
    labels must lie in {1..k_tasks} or FREE, per-task counts must equal
    the replayed prune bookkeeping, and each recorded freed count must
    match its fraction within one weight.
    """
    violations = []
    by_matrix: dict[str, list[PruneRecord]] = {}
    for rec in owner.prune_log:
        by_matrix.setdefault(rec.matrix, []).append(rec)

    for name, labels in owner.labels.items():
        values = np.unique(labels)
        bad = [int(v) for v in values if v != FREE and not 1 <= v <= k_tasks]
        if bad:
            violations.append(f"{name}: labels outside 1..{k_tasks}: {bad}")

        expected_kept = {t: 0 for t in range(1, k_tasks + 1)}
        free_count = labels.size
        for rec in sorted(by_matrix.get(name, []), key=lambda r: r.task):
            if rec.candidates != free_count:
                violations.append(
                    f"{name} task {rec.task}: {rec.candidates} candidates recorded,"
                    f" {free_count} were free"
                )
            if abs(rec.freed - rec.fraction * rec.candidates) > 1:
                violations.append(
                    f"{name} task {rec.task}: freed {rec.freed} of {rec.candidates}"
                    f" misses fraction {rec.fraction} by more than one weight"
                )
            if rec.task in expected_kept:
                expected_kept[rec.task] = rec.candidates - rec.freed
            else:
                violations.append(f"{name}: prune record for unknown task {rec.task}")
            free_count = rec.freed

        counts = owner.counts(name)
        for t, kept in expected_kept.items():
            actual = counts.get(t, 0)
            if actual != kept:
                violations.append(
                    f"{name}: task {t} owns {actual} weights, prune log says {kept}"
                )
        if counts.get(FREE, 0) != free_count:
            violations.append(
                f"{name}: {counts.get(FREE, 0)} FREE weights, replay says {free_count}"
            )
    return violations
