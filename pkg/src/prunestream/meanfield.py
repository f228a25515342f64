"""Mean-field Gaussian weight matrices and the uncertainty regularizers.

Each regularized linear transform carries a mean matrix ``phi`` and a
per-output-node log-deviation vector ``rho`` (sigma = exp(rho), so sigma
stays positive without constraints).  At the end of every task the pair
(phi, sigma) is snapshotted; during the next task's initial phase the
three regularizers pull the live weights toward that snapshot:

* reg1 penalizes squared drift, amplified where the old task was
  confident (small sigma) in either this layer or the one below;
* reg2 penalizes drift on high signal-to-noise entries with an L1 term,
  promoting sparsity elsewhere;
* reg3 keeps the new sigma close to the old one (x - log x shape, with
  its minimum exactly at sigma_new = sigma_old).

The noise reparameterization phi + upsilon * tau * sigma is applied in
train mode to entries owned by completed tasks, so their loss surface
stays flat in directions the old tasks tolerate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


class MissingSnapshotError(ValueError):
    """Regularization asked for before any task snapshot exists."""


@dataclass
class RegConfig:
    """Weights of the three regularizers plus the noise scale.

    alpha scales reg1 (taken as alpha/2), beta scales reg2, gamma scales
    reg3 (taken as gamma/2).  upsilon scales the train-mode noise.
    sigma_init is both the rho initialization and the numerator of the
    confidence ratios in reg1/reg2.
    """

    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 0.03
    upsilon: float = 1.0
    sigma_init: float = 0.05

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("regularizer weights must be non-negative")
        if self.sigma_init <= 0:
            raise ValueError("sigma_init must be positive")


class MeanFieldMatrix:
    """One regularized linear transform of shape (d_out, d_in).

    ``layer_index`` is the matrix's position in the global regularization
    order; reg1 couples each matrix to the previous one in that order.
    """

    def __init__(
        self,
        name: str,
        d_out: int,
        d_in: int,
        layer_index: int,
        sigma_init: float = 0.05,
        rng: np.random.Generator | None = None,
        init_scale: float = 0.02,
    ):
        self.name = name
        self.layer_index = layer_index
        if rng is None:
            self.phi = np.zeros((d_out, d_in), dtype=np.float32)
        else:
            self.phi = rng.normal(0.0, init_scale, size=(d_out, d_in)).astype(np.float32)
        self.rho = np.full(d_out, np.log(sigma_init), dtype=np.float32)
        self.phi_prev: np.ndarray | None = None
        self.sigma_prev: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.phi.shape

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.rho)

    def __repr__(self) -> str:
        return f"MeanFieldMatrix({self.name}, {self.phi.shape})"


def snapshot_after_task(m: MeanFieldMatrix) -> None:
    """Freeze the current (phi, sigma) as the reference for the next task."""
    m.phi_prev = m.phi.copy()
    m.sigma_prev = np.exp(m.rho)


def _require_snapshot(m: MeanFieldMatrix) -> None:
    if m.phi_prev is None or m.sigma_prev is None:
        raise MissingSnapshotError(
            f"{m.name}: no snapshot; regularization is defined from task 2 on"
        )


@dataclass
class EffectiveWeights:
    """Train-mode weight tensor plus the leaf tensors gradients flow to."""

    weights: ad.Tensor
    phi: ad.Tensor | None = None
    rho: ad.Tensor | None = None


def effective_weights(
    m: MeanFieldMatrix,
    mode: str,
    owner=None,
    rng: np.random.Generator | None = None,
    cfg: RegConfig | None = None,
    tape: ad.Tape | None = None,
    tau: np.ndarray | None = None,
    noise_mask: np.ndarray | None = None,
    task_j: int | None = None,
) -> EffectiveWeights:
    """Weights used in the forward pass.

    Train mode returns phi + upsilon * tau * sigma on entries owned by
    completed tasks (tau ~ N(0,1), drawn once per call unless supplied)
    and plain phi elsewhere, as tape tensors.  Eval mode returns the
    constant phi, with the task_j inference mask applied when an
    ownership map is given.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    labels = owner.labels_for(m.name) if owner is not None else None
    if labels is not None and labels.shape != m.phi.shape:
        raise ad.ShapeError(
            f"{m.name}: owner labels {labels.shape} do not match weights {m.phi.shape}"
        )

    if mode == "eval":
        if labels is not None and task_j is not None:
            masked = np.where(labels <= task_j, m.phi, np.float32(0.0))
            return EffectiveWeights(ad.Tensor(masked))
        return EffectiveWeights(ad.Tensor(m.phi))

    cfg = cfg or RegConfig()
    phi_t = ad.Tensor(m.phi, tape)
    rho_t = ad.Tensor(m.rho, tape)
    if noise_mask is None:
        if labels is not None:
            noise_mask = labels <= owner.tasks_completed
        else:
            noise_mask = np.zeros(m.phi.shape, dtype=bool)
    if cfg.upsilon == 0.0 or not noise_mask.any():
        return EffectiveWeights(phi_t, phi_t, rho_t)
    if tau is None:
        if rng is None:
            raise ValueError("train mode with noise needs an rng or an explicit tau")
        tau = rng.standard_normal(m.phi.shape).astype(np.float32)
    scaled_tau = (noise_mask * (cfg.upsilon * tau)).astype(np.float32)
    sigma_col = ad.reshape(ad.exp(rho_t), (m.phi.shape[0], 1))
    weights = phi_t + ad.Tensor(scaled_tau) * sigma_col
    return EffectiveWeights(weights, phi_t, rho_t)


def _live_phi(m: MeanFieldMatrix, phi: ad.Tensor | None) -> ad.Tensor:
    return phi if phi is not None else ad.Tensor(m.phi)


def _masked_drift(
    m: MeanFieldMatrix, phi: ad.Tensor, drift_mask: np.ndarray | None
) -> ad.Tensor:
    delta = phi - ad.Tensor(m.phi_prev)
    if drift_mask is not None:
        delta = delta * ad.Tensor(drift_mask.astype(np.float32))
    return delta


def reg1(
    m: MeanFieldMatrix,
    cfg: RegConfig,
    sigma_lower_prev: np.ndarray | None = None,
    phi: ad.Tensor | None = None,
    drift_mask: np.ndarray | None = None,
) -> ad.Tensor:
    """Squared drift weighted by the larger of the two confidence ratios.

    The current layer's ratio sigma_init / sigma_prev broadcasts along
    the input dimension; the lower layer's ratio broadcasts along rows.
    For the first regularized layer pass sigma_lower_prev=None and only
    the current-layer ratio applies.
    """
    _require_snapshot(m)
    d_out, d_in = m.phi.shape
    ratio = np.broadcast_to(
        (cfg.sigma_init / m.sigma_prev)[:, None], (d_out, d_in)
    ).astype(np.float32)
    if sigma_lower_prev is not None:
        if sigma_lower_prev.shape != (d_in,):
            raise ad.ShapeError(
                f"{m.name}: lower-layer sigma has length {sigma_lower_prev.shape},"
                f" expected ({d_in},)"
            )
        lower = (cfg.sigma_init / sigma_lower_prev)[None, :].astype(np.float32)
        ratio = np.maximum(ratio, lower)
    weighted = _masked_drift(m, _live_phi(m, phi), drift_mask) * ad.Tensor(ratio)
    return (weighted * weighted).sum()


def reg2(
    m: MeanFieldMatrix,
    cfg: RegConfig,
    phi: ad.Tensor | None = None,
    drift_mask: np.ndarray | None = None,
) -> ad.Tensor:
    """L1 drift weighted by the old squared signal-to-noise ratio."""
    _require_snapshot(m)
    snr_sq = (m.phi_prev / m.sigma_prev[:, None]) ** 2
    drift = _masked_drift(m, _live_phi(m, phi), drift_mask)
    weighted = drift * ad.Tensor(snr_sq.astype(np.float32))
    return (cfg.sigma_init**2) * ad.absolute(weighted).sum()


def reg3(m: MeanFieldMatrix, rho: ad.Tensor | None = None) -> ad.Tensor:
    """Per-node sigma stability: sum of (s/s_prev)^2 - log (s/s_prev)^2.

    Each summand is x - log x at x = (sigma/sigma_prev)^2, minimized at
    x=1, so the total is at least the node count with equality iff sigma
    matches the snapshot exactly.
    """
    _require_snapshot(m)
    rho_t = rho if rho is not None else ad.Tensor(m.rho)
    ratio = ad.exp(rho_t) * ad.Tensor((1.0 / m.sigma_prev).astype(np.float32))
    ratio_sq = ratio * ratio
    return ratio_sq.sum() - ad.log(ratio_sq).sum()


def total_reg(
    layers: list[MeanFieldMatrix],
    cfg: RegConfig,
    live: dict[str, tuple[ad.Tensor, ad.Tensor]] | None = None,
    drift_masks: dict[str, np.ndarray] | None = None,
) -> ad.Tensor:
    """Combined penalty over the ordered regularized matrices.

    Per matrix: (alpha/2) reg1 + beta reg2 + (gamma/2) reg3, with reg1's
    lower-layer ratio taken from the preceding matrix in ``layers``.
    """
    total: ad.Tensor | None = None
    sigma_lower: np.ndarray | None = None
    for m in layers:
        phi_t, rho_t = live.get(m.name, (None, None)) if live else (None, None)
        mask = drift_masks.get(m.name) if drift_masks else None
        term = (
            (cfg.alpha / 2.0) * reg1(m, cfg, sigma_lower, phi=phi_t, drift_mask=mask)
            + cfg.beta * reg2(m, cfg, phi=phi_t, drift_mask=mask)
            + (cfg.gamma / 2.0) * reg3(m, rho=rho_t)
        )
        total = term if total is None else total + term
        sigma_lower = m.sigma_prev
    if total is None:
        raise ValueError("total_reg needs at least one matrix")
    return total
