"""Release acceptance: nine numbered checks covering the whole engine.

Each criterion runs as one test and reports a single PASS or FAIL line
through the terminal hook in conftest.py.  Criteria 6 and 9 share one
5-task forgetting experiment (four variants, three seeds) trained once
by a module-scoped fixture; everything else runs at tiny scale.
"""

import time

import numpy as np
import pytest

from prunestream.checkpoint import checkpoint_bytes
from prunestream.cli import run_gradient_suite
from prunestream.data import generate_synthetic_stream, split_arrays
from prunestream.encoder import (
    EncoderConfig,
    EncoderModel,
    PrfParams,
    prf_overhead_ratio,
    prf_param_count,
    prf_shapes,
)
from prunestream.meanfield import (
    MeanFieldMatrix,
    RegConfig,
    reg1,
    reg2,
    reg3,
    snapshot_after_task,
)
from prunestream.metrics import ABLATIONS, backward_transfer
from prunestream.ownership import (
    FREE,
    PruneSchedule,
    partition_check,
    prune_current_task,
)
from prunestream.training import (
    OptimizerState,
    TrainConfig,
    run_stream,
    train_phase,
)

TINY = EncoderConfig(d_m=16, n_heads=2, n_layers=1, max_len=16, vocab_size=512)

# The desk-scale experiment: five synthetic tasks with half-shared
# vocabulary and half-flipped domain polarity, a toy two-layer encoder,
# and three seeds.  The exploration noise is scaled down because a task
# here has ~130 optimization steps to average it out, not thousands.
SEEDS = (1, 2, 3)
EXP_ENCODER = EncoderConfig(d_m=64, n_layers=2, n_heads=4)
EXP_UPSILON = 0.1
EXP_SIZES = (1400, 200, 400)
NAIVE_FLAGS = dict(no_prune=True, no_reg=True, no_prf=True,
                   shared_ownership=True)


def tiny_cfg(**overrides) -> TrainConfig:
    base = dict(epochs_initial=1, epochs_retrain=1, batch_size=16, seed=11)
    base.update(overrides)
    return TrainConfig(**base)


def tiny_stream(n_tasks: int, seed: int):
    return generate_synthetic_stream(n_tasks, seed=seed, sizes=(48, 8, 16))


def _experiment_run(flags: dict, seed: int):
    stream = generate_synthetic_stream(
        5, seed=seed, shared_signal=0.5, domain_drift=0.5, sizes=EXP_SIZES)
    cfg = TrainConfig(seed=seed, **flags)
    reg = RegConfig(upsilon=EXP_UPSILON)
    return run_stream(stream, cfg, reg=reg, encoder_cfg=EXP_ENCODER).matrix


@pytest.fixture(scope="module")
def experiment():
    variants = {
        "full": {},
        "naive": NAIVE_FLAGS,
        "no_IP": ABLATIONS["no_IP"],
        "no_REG": ABLATIONS["no_REG"],
    }
    matrices, wall = {}, {}
    for name, flags in variants.items():
        start = time.perf_counter()
        matrices[name] = [_experiment_run(flags, s) for s in SEEDS]
        wall[name] = time.perf_counter() - start
    return matrices, wall


def _final_avg(matrix) -> float:
    k = matrix.n_tasks
    return float(np.mean([matrix.get(k, j) for j in range(1, k + 1)]))


def _drop1(matrix) -> float:
    return matrix.get(matrix.n_tasks, 1) - matrix.get(1, 1)


def _early_final(matrix) -> float:
    return (matrix.get(matrix.n_tasks, 1) + matrix.get(matrix.n_tasks, 2)) / 2


def _seed_mean(values) -> float:
    return float(np.mean(values))


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    results = run_gradient_suite(seed=0)
    elapsed = time.perf_counter() - start
    names = {name for name, _ in results}
    assert {"layer_norm", "attention_input", "ipr_layer_input",
            "ipr_layer_wq", "reg1_phi", "reg2_phi", "reg3_rho",
            "total_reg_phi", "total_reg_rho", "joint_ce_plus_reg"} <= names
    worst = max(err for _, err in results)
    assert worst < 1e-3, f"worst relative error {worst:.2e}"
    assert elapsed < 120.0, f"gradient suite took {elapsed:.1f}s"


def test_criterion_2_closed_form_regularizers():
    rng = np.random.default_rng(2)

    # right after a snapshot the drift terms vanish and the sigma term
    # sits exactly at its node-count floor
    for d_out in (3, 6):
        m = MeanFieldMatrix("m", d_out, 4, 0, rng=rng, init_scale=0.3)
        snapshot_after_task(m)
        assert reg1(m, RegConfig()).item() == 0.0
        assert reg2(m, RegConfig()).item() == 0.0
        np.testing.assert_allclose(reg3(m).item(), float(d_out), rtol=1e-6)

    # the floor holds for arbitrary sigma
    for _ in range(10):
        m = MeanFieldMatrix("m", 5, 4, 0, rng=rng, init_scale=0.3)
        snapshot_after_task(m)
        m.rho = rng.normal(-3.0, 1.0, size=5).astype(np.float32)
        assert reg3(m).item() >= 5.0 - 1e-5

    # worked values: confidence ratio 2 on drift [0.3, 0.4]
    m = MeanFieldMatrix("m", 1, 2, 1)
    m.phi_prev = np.zeros((1, 2), dtype=np.float32)
    m.sigma_prev = np.array([0.25], dtype=np.float32)
    m.phi = np.array([[0.3, 0.4]], dtype=np.float32)
    lower = np.array([0.5, 0.5], dtype=np.float32)
    np.testing.assert_allclose(
        reg1(m, RegConfig(sigma_init=0.5), lower).item(), 1.0, rtol=1e-6)

    # snr^2 [4, 16] against drift 0.1 under sigma_init 0.5
    m = MeanFieldMatrix("m", 1, 2, 1)
    m.phi_prev = np.array([[1.0, -2.0]], dtype=np.float32)
    m.sigma_prev = np.array([0.5], dtype=np.float32)
    m.phi = m.phi_prev + np.array([[0.1, -0.1]], dtype=np.float32)
    np.testing.assert_allclose(
        reg2(m, RegConfig(sigma_init=0.5)).item(), 0.5, rtol=1e-5)

    # sigma [1, 2] -> [2, 2] gives (4 - ln 4) + 1
    m = MeanFieldMatrix("m", 2, 3, 1)
    m.phi_prev = np.zeros((2, 3), dtype=np.float32)
    m.sigma_prev = np.array([1.0, 2.0], dtype=np.float32)
    m.rho = np.log(np.array([2.0, 2.0], dtype=np.float32))
    np.testing.assert_allclose(reg3(m).item(), 3.6137, atol=1e-3)


def test_criterion_3_mask_machinery():
    stream = tiny_stream(5, seed=11)
    cfg = tiny_cfg()
    reg = RegConfig()
    schedule = PruneSchedule()
    model = EncoderModel(TINY, seed=cfg.seed, sigma_init=reg.sigma_init)

    for task in stream.tasks:
        k = task.task_id
        model.register_task(k, np.random.default_rng([cfg.seed, 0x30, k]),
                            with_prf=True)
        state = OptimizerState()
        train_phase(model, task, "initial", cfg, reg, state)

        candidates = {
            m.name: int((model.ownership.labels_for(m.name) == FREE).sum())
            for m in model.matrices()
        }
        model.ownership.claim_free(k)
        fraction = schedule.fraction_for(k)
        assert fraction == (0.40 if k == 1 else 0.75)
        for m in model.matrices():
            prune_current_task(m, model.ownership, k, fraction)

        older = {}
        kept = {}
        for m in model.matrices():
            labels = model.ownership.labels_for(m.name)
            freed = labels == FREE
            assert np.all(m.phi[freed] == 0.0), f"{m.name}: freed weights not zero"
            assert abs(int(freed.sum()) - fraction * candidates[m.name]) <= 1, (
                f"{m.name}: freed {int(freed.sum())} of {candidates[m.name]}"
            )
            older[m.name] = labels < k
            kept[m.name] = m.phi.copy()

        train_phase(model, task, "retrain", cfg, reg, state)

        for m in model.matrices():
            sel = older[m.name]
            assert np.array_equal(m.phi[sel], kept[m.name][sel]), (
                f"{m.name}: retraining moved weights of earlier tasks"
            )
            labels = model.ownership.labels_for(m.name)
            assert np.all(m.phi[labels == FREE] == 0.0)

        for m in model.matrices():
            snapshot_after_task(m)
        model.take_snapshot(k)
        model.ownership.complete_task(k)
        assert partition_check(model.ownership, k, schedule) == []


def test_criterion_4_inference_isolation():
    stream = tiny_stream(3, seed=12)
    result = run_stream(stream, tiny_cfg(seed=12), encoder_cfg=TINY)
    model = result.model
    rng = np.random.default_rng(99)
    saved = {m.name: m.phi.copy() for m in model.matrices()}

    for j in (1, 2, 3):
        ids, _ = split_arrays(stream.tasks[j - 1].test)
        before = model.forward_eval(ids, task_j=j)
        for m in model.matrices():
            scramble = model.ownership.labels_for(m.name) > j  # FREE included
            m.phi[scramble] = rng.normal(
                0.0, 1.0, size=int(scramble.sum())).astype(np.float32)
        after = model.forward_eval(ids, task_j=j)
        assert np.array_equal(before, after), f"task {j} logits changed"
        for m in model.matrices():
            m.phi[:] = saved[m.name]


def test_criterion_5_frozen_mode_retention():
    stream = tiny_stream(3, seed=13)
    result = run_stream(stream, tiny_cfg(seed=13, freeze_preserved=True),
                        encoder_cfg=TINY)
    matrix = result.matrix
    for j in range(1, 4):
        for i in range(j + 1, 4):
            assert matrix.get(i, j) == matrix.get(j, j)
    assert backward_transfer(matrix) == 0.0


def test_criterion_6_forgetting_experiment(experiment):
    matrices, wall = experiment
    runtime = wall["full"] + wall["naive"]
    full_avg = _seed_mean([_final_avg(m) for m in matrices["full"]])
    naive_avg = _seed_mean([_final_avg(m) for m in matrices["naive"]])
    full_drop = _seed_mean([abs(_drop1(m)) for m in matrices["full"]])
    naive_drop = _seed_mean([abs(_drop1(m)) for m in matrices["naive"]])
    assert full_avg - naive_avg >= 0.05, (
        f"final average margin {full_avg - naive_avg:+.4f}"
    )
    assert naive_drop - full_drop >= 0.05, (
        f"task-1 drop shrank only {naive_drop - full_drop:+.4f}"
    )
    assert runtime < 900.0, f"experiment took {runtime:.0f}s"


def test_criterion_7_prf_overhead():
    rng = np.random.default_rng(7)
    for config in (TINY, EXP_ENCODER):
        model = EncoderModel(config, seed=0)
        model.register_task(1, rng, with_prf=True)
        assert model.prf_params[1].param_count() == prf_param_count(config)

    bert_shape = EncoderConfig(d_m=768, n_layers=12, n_heads=12,
                               max_len=256, d_ff=3072, d_p=96)
    enumerated = sum(
        int(np.prod(shape)) for _, shape in prf_shapes(bert_shape, 1))
    assert prf_param_count(bert_shape) == enumerated
    assert PrfParams(1, bert_shape, rng).param_count() == enumerated
    ratio = prf_overhead_ratio(bert_shape)
    assert 0.010 <= ratio <= 0.025, f"overhead ratio {ratio:.4f}"


def test_criterion_8_determinism():
    def one_run():
        stream = tiny_stream(2, seed=14)
        result = run_stream(stream, tiny_cfg(seed=14), encoder_cfg=TINY)
        return result.matrix.to_csv(), checkpoint_bytes(result.model)

    csv_a, bytes_a = one_run()
    csv_b, bytes_b = one_run()
    assert csv_a == csv_b
    assert bytes_a == bytes_b


def test_criterion_9_ablation_directions(experiment):
    matrices, _ = experiment
    full_early = _seed_mean([_early_final(m) for m in matrices["full"]])
    no_ip_early = _seed_mean([_early_final(m) for m in matrices["no_IP"]])
    full_avg = _seed_mean([_final_avg(m) for m in matrices["full"]])
    no_reg_avg = _seed_mean([_final_avg(m) for m in matrices["no_REG"]])
    assert no_ip_early < full_early, (
        f"dropping the pruning left early-task finals at "
        f"{no_ip_early:.4f} vs {full_early:.4f}"
    )
    assert no_reg_avg < full_avg, (
        f"dropping the uncertainty treatment left the final average at "
        f"{no_reg_avg:.4f} vs {full_avg:.4f}"
    )
