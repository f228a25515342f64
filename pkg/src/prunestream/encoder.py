"""Transformer encoder with mean-field linear transforms and per-task
parallel residual functions.

Each encoder layer is attention + feed-forward under two layer norms,
with an optional task-specific low-dimensional attention branch (the
parallel residual function, PRF) added into the final residual sum.
The six linear transforms per layer (wq, wk, wv, wc, wf1, wf2) are
mean-field matrices subject to ownership, pruning, and the uncertainty
regularizers; biases, layer norms, heads, and PRF weights are plain
arrays that are snapshotted per task instead.

All forward functions accept (L, d) or (batch, L, d) activations; the
batched path is the same code via broadcasting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import PAD, UNK
from .meanfield import EffectiveWeights, MeanFieldMatrix, RegConfig, effective_weights
from .ownership import OwnershipMap

# Initialization is tuned for a from-scratch budget of a few hundred
# AdamW steps.  Value, concat, and feed-forward transforms start at
# twice fan-in scale: strong enough that token content reaches the CLS
# state from step one and that node-wise sampling noise on preserved
# weights perturbs rather than drowns the signal they carry.  Query/key
# transforms start small, so attention begins near uniform.  Task heads
# start at zero: AdamW moves each entry by roughly lr per step, so a
# random head at a larger scale could never be corrected in the budget.
EMBED_INIT_SCALE = 0.1  # frozen random features; the scale keeps tokens distinct
SOFT_START_INIT_SCALE = 0.02  # near-uniform attention at the start
PRF_INIT_SCALE = 0.02  # adapter transforms start small


def _fan_in_scale(d_in: int) -> float:
    return 1.0 / np.sqrt(d_in)


def _matrix_init_scale(kind: str, d_in: int, d_out: int) -> float:
    if kind in ("wq", "wk"):
        return SOFT_START_INIT_SCALE
    if kind == "wf2":
        return 2.0 * _fan_in_scale(d_out)
    return 2.0 * _fan_in_scale(d_in)

MATRIX_KINDS = ("wq", "wk", "wv", "wc", "wf1", "wf2")


@dataclass
class EncoderConfig:
    d_m: int = 64
    n_heads: int = 4
    n_layers: int = 2
    max_len: int = 32
    d_ff: int | None = None  # default 4 * d_m
    d_p: int | None = None  # default d_m // 8
    n_heads_p: int = 2
    activation: str = "gelu"
    vocab_size: int = 2048
    n_classes: int = 2

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.d_m
        if self.d_p is None:
            self.d_p = self.d_m // 8
        if min(self.d_m, self.n_heads, self.n_layers, self.max_len, self.d_ff,
               self.d_p, self.n_heads_p, self.n_classes) < 1:
            raise ValueError("all encoder dimensions must be positive")
        if self.d_m % self.n_heads != 0:
            raise ValueError(f"d_m={self.d_m} not divisible by n_heads={self.n_heads}")
        if self.d_p % self.n_heads_p != 0:
            raise ValueError(f"d_p={self.d_p} not divisible by n_heads_p={self.n_heads_p}")
        if self.d_p >= self.d_m:
            raise ValueError(f"d_p={self.d_p} must be smaller than d_m={self.d_m}")
        if self.activation not in ("gelu", "relu"):
            raise ValueError(f"activation must be 'gelu' or 'relu', got {self.activation!r}")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must cover the three reserved ids")


def matrix_shapes(config: EncoderConfig):
    """(name, shape) of every regularized transform, in regularization order."""
    d, f = config.d_m, config.d_ff
    shapes = {"wq": (d, d), "wk": (d, d), "wv": (d, d),
              "wc": (d, d), "wf1": (f, d), "wf2": (d, f)}
    for li in range(config.n_layers):
        for kind in MATRIX_KINDS:
            yield f"layer{li}.{kind}", shapes[kind]


def prf_shapes(config: EncoderConfig, task_id: int):
    """(name, shape) of one task's PRF parameters."""
    d, p = config.d_m, config.d_p
    yield f"prf{task_id}.w_down", (p, d)
    yield f"prf{task_id}.w_up", (d, p)
    for li in range(config.n_layers):
        for kind in ("wq_p", "wk_p", "wv_p", "wc_p"):
            yield f"prf{task_id}.layer{li}.{kind}", (p, p)


def prf_param_count(config: EncoderConfig) -> int:
    """Closed-form PRF parameter count: shared projections + per-layer attention."""
    return 2 * config.d_p * config.d_m + config.n_layers * 4 * config.d_p**2


def attention_param_count(config: EncoderConfig) -> int:
    """Closed-form count of the multi-head-attention transforms (q, k, v, c)."""
    return config.n_layers * 4 * config.d_m**2


def regularized_param_count(config: EncoderConfig) -> int:
    """Closed-form count of all prunable/regularized transform weights."""
    return config.n_layers * (4 * config.d_m**2 + 2 * config.d_m * config.d_ff)


def prf_overhead_ratio(config: EncoderConfig) -> float:
    """PRF parameters relative to the attention transforms they run beside."""
    return prf_param_count(config) / attention_param_count(config)


class LayerParams:
    """One encoder layer: six mean-field matrices plus plain parameters."""

    def __init__(self, layer_idx: int, config: EncoderConfig,
                 rng: np.random.Generator, sigma_init: float):
        d, f = config.d_m, config.d_ff
        self.layer_idx = layer_idx
        prefix = f"layer{layer_idx}"
        shapes = dict(matrix_shapes(config))
        self.matrices: dict[str, MeanFieldMatrix] = {}
        for pos, kind in enumerate(MATRIX_KINDS):
            name = f"{prefix}.{kind}"
            d_out, d_in = shapes[name]
            self.matrices[kind] = MeanFieldMatrix(
                name, d_out, d_in, layer_index=6 * layer_idx + pos,
                sigma_init=sigma_init, rng=rng,
                init_scale=_matrix_init_scale(kind, d_in, d_out),
            )
        self.b1 = np.zeros(f, dtype=np.float32)
        self.b2 = np.zeros(d, dtype=np.float32)
        self.ln1_gain = np.ones(d, dtype=np.float32)
        self.ln1_bias = np.zeros(d, dtype=np.float32)
        self.ln2_gain = np.ones(d, dtype=np.float32)
        self.ln2_bias = np.zeros(d, dtype=np.float32)

    def plain_params(self) -> dict[str, np.ndarray]:
        prefix = f"layer{self.layer_idx}"
        return {
            f"{prefix}.b1": self.b1, f"{prefix}.b2": self.b2,
            f"{prefix}.ln1_gain": self.ln1_gain, f"{prefix}.ln1_bias": self.ln1_bias,
            f"{prefix}.ln2_gain": self.ln2_gain, f"{prefix}.ln2_bias": self.ln2_bias,
        }


class PrfParams:
    """Task-specific PRF weights; projections shared by all layers."""

    def __init__(self, task_id: int, config: EncoderConfig, rng: np.random.Generator):
        self.task_id = task_id
        self.arrays: dict[str, np.ndarray] = {
            name: rng.normal(0.0, PRF_INIT_SCALE, size=shape).astype(np.float32)
            for name, shape in prf_shapes(config, task_id)
        }

    def param_count(self) -> int:
        return sum(a.size for a in self.arrays.values())


class TaskHead:
    """Per-task classification transform on the CLS state."""

    def __init__(self, task_id: int, config: EncoderConfig, rng: np.random.Generator):
        self.task_id = task_id
        self.w = np.zeros((config.n_classes, config.d_m), dtype=np.float32)
        self.b = np.zeros(config.n_classes, dtype=np.float32)

    def plain_params(self) -> dict[str, np.ndarray]:
        return {f"head{self.task_id}.w": self.w, f"head{self.task_id}.b": self.b}


# ---------------------------------------------------------------------------
# forward functions


def _split_heads(x: ad.Tensor, n_heads: int) -> ad.Tensor:
    """(..., L, d) -> (..., n, L, d/n)."""
    L, d = x.shape[-2], x.shape[-1]
    dh = d // n_heads
    if x.ndim == 2:
        return ad.transpose(x.reshape((L, n_heads, dh)), (1, 0, 2))
    b = x.shape[0]
    return ad.transpose(x.reshape((b, L, n_heads, dh)), (0, 2, 1, 3))


def _merge_heads(x: ad.Tensor) -> ad.Tensor:
    """(..., n, L, d/n) -> (..., L, d)."""
    if x.ndim == 3:
        n, L, dh = x.shape
        return ad.transpose(x, (1, 0, 2)).reshape((L, n * dh))
    b, n, L, dh = x.shape
    return ad.transpose(x, (0, 2, 1, 3)).reshape((b, L, n * dh))


def _project(h: ad.Tensor, w: ad.Tensor) -> ad.Tensor:
    """Row-vector convention: h @ w^T for weights stored (d_out, d_in)."""
    return ad.matmul(h, ad.transpose(w, (1, 0)))


def _scaled_attention(q: ad.Tensor, k: ad.Tensor, v: ad.Tensor) -> ad.Tensor:
    dh = q.shape[-1]
    scores = ad.matmul(q, ad.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
    probs = ad.softmax(scores * (1.0 / np.sqrt(dh)), axis=-1)
    return ad.matmul(probs, v)


def attention_head(h: ad.Tensor, wq_i: ad.Tensor, wk_i: ad.Tensor, wv_i: ad.Tensor) -> ad.Tensor:
    """One attention head: softmax(q k^T / sqrt(d/n)) v over all positions."""
    return _scaled_attention(_project(h, wq_i), _project(h, wk_i), _project(h, wv_i))


def multi_head_attention(h: ad.Tensor, wq: ad.Tensor, wk: ad.Tensor, wv: ad.Tensor,
                         wc: ad.Tensor, n_heads: int) -> ad.Tensor:
    """All heads at once from the stacked (d, d) projections, then wc."""
    q = _split_heads(_project(h, wq), n_heads)
    k = _split_heads(_project(h, wk), n_heads)
    v = _split_heads(_project(h, wv), n_heads)
    return _project(_merge_heads(_scaled_attention(q, k, v)), wc)


@dataclass
class LayerTensors:
    """Weight tensors of one layer for one forward pass."""

    wq: ad.Tensor
    wk: ad.Tensor
    wv: ad.Tensor
    wc: ad.Tensor
    wf1: ad.Tensor
    wf2: ad.Tensor
    b1: ad.Tensor
    b2: ad.Tensor
    ln1_gain: ad.Tensor
    ln1_bias: ad.Tensor
    ln2_gain: ad.Tensor
    ln2_bias: ad.Tensor
    n_heads: int
    activation: str


@dataclass
class PrfTensors:
    """One task's PRF weights for one forward pass."""

    w_down: ad.Tensor
    w_up: ad.Tensor
    layer_attn: list[tuple[ad.Tensor, ad.Tensor, ad.Tensor, ad.Tensor]]
    n_heads: int


def mhal(h: ad.Tensor, lt: LayerTensors) -> ad.Tensor:
    """Attention sublayer: LN(h + MHA(h))."""
    attn = multi_head_attention(h, lt.wq, lt.wk, lt.wv, lt.wc, lt.n_heads)
    return ad.layer_norm(h + attn, lt.ln1_gain, lt.ln1_bias)


def ffn(a: ad.Tensor, lt: LayerTensors) -> ad.Tensor:
    """Feed-forward on the attention sublayer output."""
    act = ad.gelu if lt.activation == "gelu" else ad.relu
    hidden = act(_project(a, lt.wf1) + lt.b1)
    return _project(hidden, lt.wf2) + lt.b2


def base_layer(h: ad.Tensor, lt: LayerTensors) -> ad.Tensor:
    """LN(MHAL(h) + FFN(MHAL(h)))."""
    a = mhal(h, lt)
    return ad.layer_norm(a + ffn(a, lt), lt.ln2_gain, lt.ln2_bias)


def prf(h: ad.Tensor, pt: PrfTensors, layer_idx: int) -> ad.Tensor:
    """Down-project, low-dimensional multi-head attention, up-project."""
    wq_p, wk_p, wv_p, wc_p = pt.layer_attn[layer_idx]
    down = _project(h, pt.w_down)
    return _project(multi_head_attention(down, wq_p, wk_p, wv_p, wc_p, pt.n_heads), pt.w_up)


def ipr_layer(h: ad.Tensor, lt: LayerTensors, pt: PrfTensors | None = None,
              layer_idx: int = 0) -> ad.Tensor:
    """LN(MHAL + FFN + PRF); without PRF this is exactly base_layer."""
    a = mhal(h, lt)
    total = a + ffn(a, lt)
    if pt is not None:
        total = total + prf(h, pt, layer_idx)
    return ad.layer_norm(total, lt.ln2_gain, lt.ln2_bias)


# ---------------------------------------------------------------------------
# the model


@dataclass
class LiveParams:
    """Tape leaves of one training step, keyed by parameter name."""

    matrices: dict[str, EffectiveWeights] = field(default_factory=dict)
    plain: dict[str, ad.Tensor] = field(default_factory=dict)


class EncoderModel:
    """The shared encoder plus per-task heads, PRF branches, and snapshots."""

    def __init__(self, config: EncoderConfig, seed: int = 0, sigma_init: float = 0.05):
        self.config = config
        self.seed = int(seed)
        self.sigma_init = float(sigma_init)
        rng = np.random.default_rng([int(seed), 0x11])
        d = config.d_m
        self.embedding = rng.normal(0.0, EMBED_INIT_SCALE,
                                    size=(config.vocab_size, d)).astype(np.float32)
        self.positional = rng.normal(0.0, EMBED_INIT_SCALE,
                                     size=(config.max_len, d)).astype(np.float32)
        self.layers = [LayerParams(li, config, rng, sigma_init)
                       for li in range(config.n_layers)]
        self.prf_params: dict[int, PrfParams] = {}
        self.heads: dict[int, TaskHead] = {}
        self.snapshots: dict[int, dict[str, np.ndarray]] = {}
        self.ownership = OwnershipMap.for_shapes(dict(matrix_shapes(config)))

    # -- parameter access ---------------------------------------------------

    def matrices(self) -> list[MeanFieldMatrix]:
        """All regularized matrices in regularization order."""
        return [layer.matrices[kind] for layer in self.layers for kind in MATRIX_KINDS]

    def register_task(self, task_id: int, rng: np.random.Generator,
                      with_prf: bool = True) -> None:
        if task_id in self.heads:
            raise ValueError(f"task {task_id} already registered")
        self.heads[task_id] = TaskHead(task_id, self.config, rng)
        if with_prf:
            self.prf_params[task_id] = PrfParams(task_id, self.config, rng)

    def task_plain_params(self, task_id: int) -> dict[str, np.ndarray]:
        """Live unregularized parameters relevant to one task."""
        if task_id not in self.heads:
            raise ValueError(f"unknown task {task_id}")
        params: dict[str, np.ndarray] = {}
        for layer in self.layers:
            params.update(layer.plain_params())
        params.update(self.heads[task_id].plain_params())
        if task_id in self.prf_params:
            params.update(self.prf_params[task_id].arrays)
        return params

    def take_snapshot(self, task_id: int) -> None:
        """Copy the unregularized parameters for later old-task inference."""
        self.snapshots[task_id] = {
            name: arr.copy() for name, arr in self.task_plain_params(task_id).items()
        }

    # -- forward passes -----------------------------------------------------

    def _embed(self, ids: np.ndarray) -> ad.Tensor:
        ids = np.asarray(ids)
        squeeze = ids.ndim == 1
        if squeeze:
            ids = ids[None, :]
        if ids.shape[1] > self.config.max_len:
            ids = ids[:, : self.config.max_len]
        ids = np.where((ids < 0) | (ids >= self.config.vocab_size), UNK, ids)
        h0 = self.embedding[ids] + self.positional[: ids.shape[1]]
        return ad.Tensor(h0)

    def _plain_tensor_bundle(self, values: dict[str, np.ndarray],
                             tape: ad.Tape | None,
                             live: LiveParams | None) -> dict[str, ad.Tensor]:
        out = {}
        for name, arr in values.items():
            t = ad.Tensor(arr, tape)
            out[name] = t
            if live is not None:
                live.plain[name] = t
        return out

    def _layer_tensors(self, layer: LayerParams, weight_of, plain: dict[str, ad.Tensor]):
        prefix = f"layer{layer.layer_idx}"
        return LayerTensors(
            wq=weight_of(layer.matrices["wq"]), wk=weight_of(layer.matrices["wk"]),
            wv=weight_of(layer.matrices["wv"]), wc=weight_of(layer.matrices["wc"]),
            wf1=weight_of(layer.matrices["wf1"]), wf2=weight_of(layer.matrices["wf2"]),
            b1=plain[f"{prefix}.b1"], b2=plain[f"{prefix}.b2"],
            ln1_gain=plain[f"{prefix}.ln1_gain"], ln1_bias=plain[f"{prefix}.ln1_bias"],
            ln2_gain=plain[f"{prefix}.ln2_gain"], ln2_bias=plain[f"{prefix}.ln2_bias"],
            n_heads=self.config.n_heads, activation=self.config.activation,
        )

    def _prf_tensors(self, task_id: int, plain: dict[str, ad.Tensor]) -> PrfTensors | None:
        if task_id not in self.prf_params:
            return None
        pfx = f"prf{task_id}"
        return PrfTensors(
            w_down=plain[f"{pfx}.w_down"], w_up=plain[f"{pfx}.w_up"],
            layer_attn=[
                tuple(plain[f"{pfx}.layer{li}.{kind}"]
                      for kind in ("wq_p", "wk_p", "wv_p", "wc_p"))
                for li in range(self.config.n_layers)
            ],
            n_heads=self.config.n_heads_p,
        )

    def _run_stack(self, h: ad.Tensor, layer_tensors: list[LayerTensors],
                   pt: PrfTensors | None, head_w: ad.Tensor, head_b: ad.Tensor) -> ad.Tensor:
        for li, lt in enumerate(layer_tensors):
            h = ipr_layer(h, lt, pt, li)
        cls = ad.select(h, -2, 0)
        return _project(cls, head_w) + head_b

    def forward_eval(self, ids: np.ndarray, task_j: int, masked: bool = True) -> np.ndarray:
        """Logits for task_j from its snapshot and (optionally) its
        inference mask; a pure function of the stored state."""
        if task_j not in self.snapshots:
            raise ValueError(f"no snapshot for task {task_j}; train it first")
        snap = self.snapshots[task_j]
        labels_of = self.ownership.labels_for

        def weight_of(m: MeanFieldMatrix) -> ad.Tensor:
            if masked:
                return ad.Tensor(np.where(labels_of(m.name) <= task_j, m.phi,
                                          np.float32(0.0)))
            return ad.Tensor(m.phi)

        plain = {name: ad.Tensor(arr) for name, arr in snap.items()}
        lts = [self._layer_tensors(layer, weight_of, plain) for layer in self.layers]
        pt = self._prf_tensors(task_j, plain) if f"prf{task_j}.w_down" in snap else None
        logits = self._run_stack(self._embed(ids), lts, pt,
                                 plain[f"head{task_j}.w"], plain[f"head{task_j}.b"])
        return logits.data

    def forward_train(
        self,
        ids: np.ndarray,
        task_k: int,
        tape: ad.Tape,
        reg_cfg: RegConfig,
        noise_masks: dict[str, np.ndarray] | None = None,
        tau: dict[str, np.ndarray] | None = None,
        rng: np.random.Generator | None = None,
    ) -> tuple[ad.Tensor, LiveParams]:
        """Logits plus the live parameter leaves for one training step.

        Noise on each matrix follows ``noise_masks`` (no noise where the
        mask is absent); tau can be supplied per matrix or drawn from rng.
        """
        live = LiveParams()

        def weight_of(m: MeanFieldMatrix) -> ad.Tensor:
            eff = effective_weights(
                m, "train", cfg=reg_cfg, tape=tape, rng=rng,
                tau=tau.get(m.name) if tau else None,
                noise_mask=noise_masks.get(m.name) if noise_masks else
                np.zeros(m.shape, dtype=bool),
            )
            live.matrices[m.name] = eff
            return eff.weights

        plain = self._plain_tensor_bundle(self.task_plain_params(task_k), tape, live)
        lts = [self._layer_tensors(layer, weight_of, plain) for layer in self.layers]
        pt = self._prf_tensors(task_k, plain)
        logits = self._run_stack(self._embed(ids), lts, pt,
                                 plain[f"head{task_k}.w"], plain[f"head{task_k}.b"])
        return logits, live


def model_forward(model: EncoderModel, token_ids, task_id: int) -> np.ndarray:
    """Eval-mode logits for one CLS-prefixed sequence."""
    logits = model.forward_eval(np.asarray(token_ids, dtype=np.int64), task_id)
    return logits[0]
