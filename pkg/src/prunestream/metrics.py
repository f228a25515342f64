"""Transfer measurement: the accuracy matrix, derived curves, the
re-init comparison, and the ablation and ordering studies.

All derived metrics are pure functions of the transfer matrix (plus the
re-init accuracies), so reports can be rebuilt from stored matrices.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .data import TaskSpec, TaskStream, split_arrays
from .encoder import EncoderConfig, EncoderModel
from .meanfield import RegConfig
from .ownership import PruneSchedule


@dataclass
class TransferMatrix:
    """Lower-triangular accuracies: cell (i, j) is accuracy on task j
    after training through task i.  Indices are 1-based task positions;
    cells above the diagonal do not exist."""

    acc: np.ndarray
    counts: np.ndarray

    @classmethod
    def empty(cls, n_tasks: int) -> "TransferMatrix":
        if n_tasks < 1:
            raise ValueError("need at least one task")
        return cls(np.full((n_tasks, n_tasks), np.nan),
                   np.zeros((n_tasks, n_tasks), dtype=np.int64))

    @property
    def n_tasks(self) -> int:
        return self.acc.shape[0]

    def _check(self, i: int, j: int) -> None:
        if not (1 <= j <= i <= self.n_tasks):
            raise ValueError(
                f"cell ({i}, {j}) outside the lower triangle of a "
                f"{self.n_tasks}-task matrix"
            )

    def record(self, i: int, j: int, accuracy: float, count: int) -> None:
        self._check(i, j)
        if not (0.0 <= accuracy <= 1.0):
            raise ValueError(f"accuracy {accuracy} outside [0, 1]")
        self.acc[i - 1, j - 1] = accuracy
        self.counts[i - 1, j - 1] = count

    def get(self, i: int, j: int) -> float:
        self._check(i, j)
        return float(self.acc[i - 1, j - 1])

    def to_csv(self) -> str:
        """Four-decimal cells, empty above the diagonal."""
        header = "after_task," + ",".join(
            f"task{j}" for j in range(1, self.n_tasks + 1)
        )
        lines = [header]
        for i in range(1, self.n_tasks + 1):
            cells = [
                f"{self.acc[i - 1, j - 1]:.4f}" if j <= i else ""
                for j in range(1, self.n_tasks + 1)
            ]
            lines.append(f"{i}," + ",".join(cells))
        return "\n".join(lines) + "\n"

    def to_lists(self) -> list[list[float | None]]:
        return [
            [round(float(self.acc[i, j]), 4) if j <= i else None
             for j in range(self.n_tasks)]
            for i in range(self.n_tasks)
        ]


def evaluate(model: EncoderModel, task: TaskSpec, masked: bool = True,
             batch_size: int = 128, as_task: int | None = None) -> float:
    """Test-split accuracy for one task from its stored state.

    ``as_task`` scores the data through another task's parameters, which
    sequential fine-tuning uses to judge old tasks by the newest state.
    """
    ids, labels = split_arrays(task.test)
    if len(labels) == 0:
        raise ValueError(f"task {task.task_id} has an empty test split")
    slot = task.task_id if as_task is None else as_task
    correct = 0
    for start in range(0, len(labels), batch_size):
        logits = model.forward_eval(ids[start : start + batch_size],
                                    slot, masked=masked)
        correct += int((np.argmax(logits, axis=1) ==
                        labels[start : start + batch_size]).sum())
    return correct / len(labels)


def avg_accuracy_curve(matrix: TransferMatrix) -> list[float]:
    """curve[k-1] = mean accuracy over tasks 1..k after training task k."""
    return [float(np.mean(matrix.acc[k - 1, :k]))
            for k in range(1, matrix.n_tasks + 1)]


def backward_transfer(matrix: TransferMatrix) -> float:
    """Mean final-minus-own accuracy over all tasks except the last."""
    K = matrix.n_tasks
    if K == 1:
        return 0.0
    deltas = [matrix.get(K, j) - matrix.get(j, j) for j in range(1, K)]
    return float(np.mean(deltas))


def _task_seed(base_seed: int, name: str) -> int:
    digest = hashlib.blake2b(f"{base_seed}:{name}".encode(), digest_size=8)
    return int.from_bytes(digest.digest(), "little") % (2**31)


def forward_transfer_vs_reinit(
    stream: TaskStream,
    cfg,
    reg: RegConfig | None = None,
    schedule: PruneSchedule | None = None,
    encoder_cfg: EncoderConfig | None = None,
    lifelong=None,
) -> dict[int, float]:
    """Per-task gain of the lifelong run over a fresh single-task model.

    The baseline for each task is the same pipeline run on a one-task
    stream, seeded from the task's name, so it does not depend on where
    the task sits in the stream.  Task 1 is excluded: with nothing
    learned yet, the lifelong model is itself freshly initialized.
    """
    from .training import run_stream

    if lifelong is None:
        lifelong = run_stream(stream, cfg, reg, schedule, encoder_cfg)
    deltas: dict[int, float] = {}
    for position, task in enumerate(stream.tasks, start=1):
        if position == 1:
            continue
        solo = dataclasses.replace(task, task_id=1)
        solo_stream = TaskStream(tasks=[solo], seed=stream.seed)
        solo_cfg = dataclasses.replace(cfg, seed=_task_seed(cfg.seed, task.name))
        baseline = run_stream(solo_stream, solo_cfg, reg, schedule, encoder_cfg)
        deltas[position] = round(
            lifelong.matrix.get(position, position) - baseline.matrix.get(1, 1), 4
        )
    return deltas


# Removing a strategy, not just a loss term: dropping the uncertainty
# treatment reverts preserved weights to their frozen default, so the
# no_REG variant freezes them and drops the penalties, while the no_reg
# flag alone only removes the penalty terms from the loss.
ABLATIONS = {
    "full": {},
    "no_IP": {"no_prune": True},
    "no_REG": {"freeze_preserved": True, "no_reg": True},
    "no_PRF": {"no_prf": True},
}


def ablation_suite(
    stream: TaskStream,
    cfg,
    reg: RegConfig | None = None,
    schedule: PruneSchedule | None = None,
    encoder_cfg: EncoderConfig | None = None,
) -> dict[str, "RunReport"]:
    """The full run and the three single-component removals, same data."""
    from .training import run_stream

    reports = {}
    for name, flags in ABLATIONS.items():
        variant = dataclasses.replace(cfg, **flags)
        result = run_stream(stream, variant, reg, schedule, encoder_cfg)
        reports[name] = build_report(stream, variant, result, reg, schedule,
                                     encoder_cfg, label=name)
    return reports


def ordering_study(
    base_stream: TaskStream,
    n_orders: int,
    seed: int,
    cfg,
    reg: RegConfig | None = None,
    schedule: PruneSchedule | None = None,
    encoder_cfg: EncoderConfig | None = None,
    orders: list[list[int]] | None = None,
) -> list["RunReport"]:
    """Re-run the stream under sampled task orders.

    ``orders`` (0-based positions into the base task list) overrides the
    sampling when given.  Task ids are reassigned by position so each
    permuted stream trains as tasks 1..K.
    """
    if n_orders < 1:
        raise ValueError("n_orders must be at least 1")
    from .training import run_stream

    K = len(base_stream.tasks)
    if orders is None:
        rng = np.random.default_rng([seed, 0x0E])
        orders = [list(rng.permutation(K)) for _ in range(n_orders)]
    reports = []
    for number, perm in enumerate(orders):
        if sorted(perm) != list(range(K)):
            raise ValueError(f"order {perm} is not a permutation of 0..{K - 1}")
        tasks = [
            dataclasses.replace(base_stream.tasks[p], task_id=pos + 1)
            for pos, p in enumerate(perm)
        ]
        stream = TaskStream(tasks=tasks, seed=base_stream.seed,
                            order=[int(p) for p in perm])
        result = run_stream(stream, cfg, reg, schedule, encoder_cfg)
        reports.append(
            build_report(stream, cfg, result, reg, schedule, encoder_cfg,
                         label=f"order{number}", order=[int(p) for p in perm])
        )
    return reports


@dataclass
class RunReport:
    """Everything needed to reproduce and summarize one run.

    Wall-clock time is kept out of the serialized form so that repeated
    runs with equal config and seed emit byte-identical reports; timing
    goes to a sidecar file instead.
    """

    label: str
    seed: int
    config: dict
    matrix: TransferMatrix
    avg_curve: list[float]
    backward: float
    final_avg: float
    loss_traces: dict[str, dict[str, list[float]]]
    task_names: list[str]
    order: list[int] | None = None
    wall_clock_s: float | None = None

    def to_dict(self) -> dict:
        data = {
            "label": self.label,
            "seed": self.seed,
            "config": self.config,
            "task_names": self.task_names,
            "transfer_matrix": self.matrix.to_lists(),
            "sample_counts": [[int(c) for c in row] for row in self.matrix.counts],
            "avg_accuracy_curve": [round(v, 4) for v in self.avg_curve],
            "backward_transfer": round(self.backward, 4),
            "final_avg_accuracy": round(self.final_avg, 4),
            "loss_traces": self.loss_traces,
        }
        if self.order is not None:
            data["order"] = self.order
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _config_echo(cfg, reg, schedule, encoder_cfg) -> dict:
    echo = {"train": dataclasses.asdict(cfg)}
    echo["reg"] = dataclasses.asdict(reg or RegConfig())
    echo["schedule"] = dataclasses.asdict(schedule or PruneSchedule())
    echo["encoder"] = dataclasses.asdict(encoder_cfg or EncoderConfig())
    return echo


def build_report(stream, cfg, result, reg=None, schedule=None, encoder_cfg=None,
                 label: str = "run", order=None,
                 wall_clock_s: float | None = None) -> RunReport:
    curve = avg_accuracy_curve(result.matrix)
    traces = {
        str(r.task_id): {
            "initial": [round(x, 6) for x in r.initial_losses],
            "retrain": [round(x, 6) for x in r.retrain_losses],
        }
        for r in result.reports
    }
    return RunReport(
        label=label,
        seed=cfg.seed,
        config=_config_echo(cfg, reg, schedule, encoder_cfg),
        matrix=result.matrix,
        avg_curve=curve,
        backward=backward_transfer(result.matrix),
        final_avg=curve[-1],
        loss_traces=traces,
        task_names=[t.name for t in stream.tasks],
        order=order,
        wall_clock_s=wall_clock_s,
    )
