"""Sequential training over a task stream.

Each task runs the same three-stage cycle: an initial phase that trains
everything (cross-entropy plus the drift regularizers once snapshots
exist), a pruning pass that claims the free weights for the task and
then releases the smallest fraction of them by |phi| / sigma, and a
retrain phase that fine-tunes only the entries the task kept.  Snapshots
of the mean-field references and of the unregularized parameters are
taken when the cycle completes, and the ownership map advances.

The optimizer is Adam with decoupled weight decay.  Its moment buffers
live for exactly one task: stale statistics about weights that changed
owner are never carried across task boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import TaskSpec, TaskStream, split_arrays
from .encoder import EncoderConfig, EncoderModel
from .meanfield import RegConfig, snapshot_after_task, total_reg
from .ownership import (
    FREE,
    PruneRecord,
    PruneSchedule,
    prune_current_task,
    trainable_mask,
)

PHASES = ("initial", "retrain")


@dataclass
class TrainConfig:
    """Optimization settings and ablation switches for one run.

    The main learning rate covers the encoder matrices, sigma, biases,
    layer norms, and heads; the PRF branch has its own rate.  Weight
    decay applies only to the mean weights of the attention and
    feed-forward transforms.

    ``shared_ownership`` turns the engine into a classic sequential
    fine-tuner: each task's head (and adapter, if any) starts from the
    previous task's state, and earlier tasks are scored through the
    newest parameters instead of their own snapshots.  Combined with
    no_prune, no_reg, and no_prf this is the naive baseline.
    """

    epochs_initial: int = 3
    epochs_retrain: int = 3
    batch_size: int = 32
    lr_main_initial: float = 1e-4
    lr_main_retrain: float = 1e-5
    lr_prf_initial: float = 1e-4
    lr_prf_retrain: float = 1e-5
    weight_decay: float = 4e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    no_prune: bool = False
    no_reg: bool = False
    no_prf: bool = False
    freeze_preserved: bool = False
    shared_ownership: bool = False

    def __post_init__(self):
        if self.epochs_initial < 1 or self.epochs_retrain < 1:
            raise ValueError("epoch counts must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        rates = (self.lr_main_initial, self.lr_main_retrain,
                 self.lr_prf_initial, self.lr_prf_retrain)
        if any(lr < 0 for lr in rates):
            raise ValueError("learning rates must be non-negative")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


class OptimizerState:
    """Adam moment buffers and step counts, keyed by parameter name."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}


def adam_decoupled_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    wd: float,
    trainable_masks: dict[str, np.ndarray] | None = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update with decoupled decay, in place.

    Parameters whose mask is absent are fully trainable; masked-out
    entries keep their values and moment statistics untouched.  Each
    parameter carries its own step count for bias correction.
    """
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != theta.shape:
            raise ad.ShapeError(
                f"{name}: gradient shape {g.shape} != parameter shape {theta.shape}"
            )
        mask = trainable_masks.get(name) if trainable_masks is not None else None
        if mask is not None and not mask.any():
            continue
        t = state.steps.get(name, 0) + 1
        old_m = state.m.get(name)
        old_v = state.v.get(name)
        if old_m is None:
            old_m = np.zeros_like(theta)
            old_v = np.zeros_like(theta)
        new_m = beta1 * old_m + (1.0 - beta1) * g
        new_v = beta2 * old_v + (1.0 - beta2) * (g * g)
        m_hat = new_m / (1.0 - beta1**t)
        v_hat = new_v / (1.0 - beta2**t)
        new_theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
        if wd:
            new_theta = new_theta - lr * wd * theta
        if mask is not None:
            new_theta = np.where(mask, new_theta, theta)
            new_m = np.where(mask, new_m, old_m)
            new_v = np.where(mask, new_v, old_v)
        theta[...] = new_theta
        state.m[name] = new_m
        state.v[name] = new_v
        state.steps[name] = t


def _drift_masks(model: EncoderModel, task_k: int,
                 no_prune: bool) -> dict[str, np.ndarray]:
    """Entries the drift penalties anchor during task_k.

    With pruning these are the owned entries of tasks before k.  Without
    pruning nothing is ever owned, so the whole network plays that role
    from the second task on: the accumulated shared weights are the
    knowledge the penalties protect.
    """
    masks = {}
    for m in model.matrices():
        if no_prune:
            masks[m.name] = np.ones(m.shape, dtype=bool)
        else:
            masks[m.name] = model.ownership.labels_for(m.name) < task_k
    return masks


def _noise_masks(model: EncoderModel, task_k: int) -> dict[str, np.ndarray] | None:
    """Entries that train under sampling noise during task_k.

    Strictly the entries owned by earlier tasks: noise lets the current
    task explore around weights it reuses but must not rely on exactly.
    Returns None when no entry qualifies (first task, or no pruning).
    """
    masks = {m.name: model.ownership.labels_for(m.name) < task_k
             for m in model.matrices()}
    if any(mask.any() for mask in masks.values()):
        return masks
    return None


def train_phase(
    model: EncoderModel,
    task: TaskSpec,
    phase: str,
    cfg: TrainConfig,
    reg: RegConfig | None = None,
    state: OptimizerState | None = None,
) -> list[float]:
    """Run one phase over the task's training split.

    Returns the mean training loss per epoch (weighted per example).
    The loss is cross-entropy, plus the drift regularizers in the
    initial phase from the second task on.
    """
    if phase not in PHASES:
        raise ValueError(f"phase must be one of {PHASES}, got {phase!r}")
    if not task.train:
        raise ValueError(f"task {task.task_id} has an empty training split")
    reg = reg or RegConfig()
    state = state or OptimizerState()
    k = task.task_id
    initial = phase == "initial"
    phase_code = PHASES.index(phase)

    ids_all, labels_all = split_arrays(task.train)
    n = len(task.train)
    epochs = cfg.epochs_initial if initial else cfg.epochs_retrain
    lr_main = cfg.lr_main_initial if initial else cfg.lr_main_retrain
    lr_prf = cfg.lr_prf_initial if initial else cfg.lr_prf_retrain

    matrices = model.matrices()
    masks = trainable_mask(model.ownership, phase, k, cfg.freeze_preserved)
    if cfg.no_prune and initial:
        # nothing is ever claimed, so every entry keeps training
        masks = {m.name: np.ones(m.shape, dtype=bool) for m in matrices}

    # The uncertainty machinery belongs to the initial phase; retraining
    # fits the kept weights against the deterministic network they will
    # serve.  The no_reg flag removes the penalties from the loss and
    # nothing else; sampling noise rides on ownership, so it disappears
    # on its own when nothing is pruned, and is skipped when preserved
    # weights are frozen and have no movement left to explore.
    use_reg = k >= 2 and not cfg.no_reg and initial
    drift = _drift_masks(model, k, cfg.no_prune) if use_reg else None
    noise = None
    if initial and reg.upsilon > 0 and not cfg.freeze_preserved:
        noise = _noise_masks(model, k)
    use_noise = noise is not None

    shuffle_rng = np.random.default_rng([cfg.seed, 0x7A, k, phase_code])
    noise_rng = np.random.default_rng([cfg.seed, 0x7B, k, phase_code])

    losses = []
    for _ in range(epochs):
        order = shuffle_rng.permutation(n)
        weighted_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            tape = ad.Tape()
            tau = None
            if use_noise:
                tau = {
                    m.name: noise_rng.standard_normal(m.shape, dtype=np.float32)
                    for m in matrices
                }
            logits, live = model.forward_train(
                ids_all[idx], k, tape, reg, noise_masks=noise, tau=tau
            )
            loss = ad.cross_entropy(logits, labels_all[idx])
            if use_reg:
                pairs = {
                    name: (eff.phi, eff.rho) for name, eff in live.matrices.items()
                }
                loss = loss + total_reg(matrices, reg, live=pairs,
                                        drift_masks=drift)
            grads = tape.backward(loss)
            _apply_updates(model, k, live, grads, state, cfg, masks,
                           lr_main, lr_prf, initial)
            weighted_sum += float(loss.data) * len(idx)
        losses.append(weighted_sum / n)
    return losses


def _apply_updates(model, task_k, live, grads, state, cfg, masks,
                   lr_main, lr_prf, initial):
    def step(params, grad_map, lr, wd, mask_map=None):
        adam_decoupled_step(params, grad_map, state, lr, wd, mask_map,
                            cfg.beta1, cfg.beta2, cfg.eps)

    phi_params, phi_grads = {}, {}
    rho_params, rho_grads = {}, {}
    for m in model.matrices():
        eff = live.matrices[m.name]
        if eff.phi is not None:
            phi_params[m.name] = m.phi
            phi_grads[m.name] = grads.wrt(eff.phi)
        if initial and eff.rho is not None:
            rho_params[m.name + ".rho"] = m.rho
            rho_grads[m.name + ".rho"] = grads.wrt(eff.rho)
    step(phi_params, phi_grads, lr_main, cfg.weight_decay, masks)
    if rho_params:
        step(rho_params, rho_grads, lr_main, 0.0)

    main_params, main_grads = {}, {}
    prf_params, prf_grads = {}, {}
    for name, arr in model.task_plain_params(task_k).items():
        grad = grads.wrt(live.plain[name])
        if name.startswith("prf"):
            prf_params[name], prf_grads[name] = arr, grad
        else:
            main_params[name], main_grads[name] = arr, grad
    step(main_params, main_grads, lr_main, 0.0)
    if prf_params:
        step(prf_params, prf_grads, lr_prf, 0.0)


@dataclass
class TaskReport:
    """What one task's learn cycle did, for the run report."""

    task_id: int
    name: str
    initial_losses: list[float]
    retrain_losses: list[float]
    claimed: int
    freed: int
    prune_records: list[PruneRecord] = field(default_factory=list)


def learn_task(
    model: EncoderModel,
    task: TaskSpec,
    cfg: TrainConfig,
    reg: RegConfig | None = None,
    schedule: PruneSchedule | None = None,
) -> TaskReport:
    """One full cycle: initial training, pruning, retraining, snapshots."""
    k = task.task_id
    expected = model.ownership.tasks_completed + 1
    if k != expected:
        raise ValueError(f"task {k} out of order; expected task {expected}")
    reg = reg or RegConfig()
    schedule = schedule or PruneSchedule()
    if k not in model.heads:
        model.register_task(k, np.random.default_rng([cfg.seed, 0x30, k]),
                            with_prf=not cfg.no_prf)
        if cfg.shared_ownership and k >= 2:
            model.heads[k].w[:] = model.heads[k - 1].w
            model.heads[k].b[:] = model.heads[k - 1].b
            if k in model.prf_params:
                for name, arr in model.prf_params[k].arrays.items():
                    prev = name.replace(f"prf{k}.", f"prf{k - 1}.")
                    arr[:] = model.prf_params[k - 1].arrays[prev]

    state = OptimizerState()
    initial_losses = train_phase(model, task, "initial", cfg, reg, state)

    claimed = 0
    freed = 0
    records: list[PruneRecord] = []
    if not cfg.no_prune:
        before = {m.name: int((model.ownership.labels_for(m.name) == FREE).sum())
                  for m in model.matrices()}
        model.ownership.claim_free(k)
        claimed = sum(before.values())
        fraction = schedule.fraction_for(k)
        log_start = len(model.ownership.prune_log)
        for m in model.matrices():
            freed += prune_current_task(m, model.ownership, k, fraction)
        records = list(model.ownership.prune_log[log_start:])

    retrain_losses = train_phase(model, task, "retrain", cfg, reg, state)

    for m in model.matrices():
        snapshot_after_task(m)
    model.take_snapshot(k)
    model.ownership.complete_task(k)
    return TaskReport(k, task.name, initial_losses, retrain_losses,
                      claimed - freed, freed, records)


@dataclass
class StreamResult:
    """A finished run: the trained model, its matrix, per-task reports."""

    model: EncoderModel
    matrix: "TransferMatrix"
    reports: list[TaskReport]


def run_stream(
    stream: TaskStream,
    cfg: TrainConfig,
    reg: RegConfig | None = None,
    schedule: PruneSchedule | None = None,
    encoder_cfg: EncoderConfig | None = None,
    checkpoint_dir: str | None = None,
) -> StreamResult:
    """Learn every task in order, measuring accuracy on all seen tasks.

    After task i the model is evaluated on the test split of every task
    j <= i, filling the lower-triangular transfer matrix.  A checkpoint
    is written per task when a directory is given.
    """
    from .checkpoint import save_checkpoint
    from .metrics import TransferMatrix, evaluate

    encoder_cfg = encoder_cfg or EncoderConfig()
    reg = reg or RegConfig()
    model = EncoderModel(encoder_cfg, seed=cfg.seed, sigma_init=reg.sigma_init)
    matrix = TransferMatrix.empty(len(stream.tasks))
    reports = []
    for i, task in enumerate(stream.tasks, start=1):
        reports.append(learn_task(model, task, cfg, reg, schedule))
        for j in range(1, i + 1):
            seen = stream.tasks[j - 1]
            acc = evaluate(model, seen, masked=not cfg.no_prune,
                           as_task=i if cfg.shared_ownership else None)
            matrix.record(i, j, acc, len(seen.test))
        if checkpoint_dir is not None:
            save_checkpoint(model, f"{checkpoint_dir}/task{i:02d}.ckpt")
    return StreamResult(model, matrix, reports)
