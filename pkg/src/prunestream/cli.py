"""Command-line entry point.

Subcommands: train, eval, ablate, orders, gradcheck, gen-data, report.
Settings resolve in three layers: dataclass defaults, then a JSON config
file (sections "encoder", "train", "reg", "schedule", "stream"), then
explicit command-line flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    TaskStream,
    generate_synthetic_stream,
    generate_synthetic_texts,
    load_tsv_task,
)
from .meanfield import MeanFieldMatrix, RegConfig, snapshot_after_task, total_reg
from .metrics import (
    ablation_suite,
    avg_accuracy_curve,
    backward_transfer,
    build_report,
    evaluate,
    forward_transfer_vs_reinit,
    ordering_study,
)
from .ownership import PruneSchedule
from .training import TrainConfig, run_stream


# ---------------------------------------------------------------------------
# config resolution


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        config = json.load(fh)
    known = {"encoder", "train", "reg", "schedule", "stream"}
    unknown = set(config) - known
    if unknown:
        raise SystemExit(f"config file {path}: unknown sections {sorted(unknown)}")
    return config


def _build(cls, file_section: dict, flag_values: dict):
    """Defaults, overridden by the config file, overridden by flags."""
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(file_section) - fields
    if unknown:
        raise SystemExit(f"{cls.__name__}: unknown config keys {sorted(unknown)}")
    merged = dict(file_section)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise SystemExit(f"{cls.__name__}: {exc}") from exc


def _pick(args: argparse.Namespace, names: dict[str, str]) -> dict:
    return {field: getattr(args, attr) for field, attr in names.items()
            if hasattr(args, attr)}


_TRAIN_FLAGS = {
    "epochs_initial": "epochs_initial", "epochs_retrain": "epochs_retrain",
    "batch_size": "batch_size",
    "lr_main_initial": "lr_main_initial", "lr_main_retrain": "lr_main_retrain",
    "lr_prf_initial": "lr_prf_initial", "lr_prf_retrain": "lr_prf_retrain",
    "weight_decay": "weight_decay", "seed": "seed",
    "no_prune": "no_prune", "no_reg": "no_reg", "no_prf": "no_prf",
    "freeze_preserved": "freeze_preserved",
    "shared_ownership": "shared_ownership",
}
_ENCODER_FLAGS = {
    "d_m": "d_m", "n_heads": "n_heads", "n_layers": "n_layers",
    "max_len": "max_len", "d_ff": "d_ff", "d_p": "d_p",
    "n_heads_p": "n_heads_p", "vocab_size": "vocab_size",
}
_REG_FLAGS = {"alpha": "alpha", "beta": "beta", "gamma": "gamma",
              "upsilon": "upsilon", "sigma_init": "sigma_init"}
_SCHEDULE_FLAGS = {"first_task_fraction": "first_fraction",
                   "later_fraction": "later_fraction"}


def _resolve_configs(args):
    config = _load_config_file(getattr(args, "config", None))
    train_cfg = _build(TrainConfig, config.get("train", {}),
                       _pick(args, _TRAIN_FLAGS))
    encoder_cfg = _build(enc.EncoderConfig, config.get("encoder", {}),
                         _pick(args, _ENCODER_FLAGS))
    reg_cfg = _build(RegConfig, config.get("reg", {}), _pick(args, _REG_FLAGS))
    schedule = _build(PruneSchedule, config.get("schedule", {}),
                      _pick(args, _SCHEDULE_FLAGS))
    return config, train_cfg, encoder_cfg, reg_cfg, schedule


def _resolve_stream(args, config: dict, encoder_cfg, train_cfg) -> TaskStream:
    stream_cfg = dict(config.get("stream", {}))
    for key, attr in (("tasks", "tasks"), ("stream_seed", "stream_seed"),
                      ("shared_signal", "shared_signal"),
                      ("domain_drift", "domain_drift"), ("sizes", "sizes"),
                      ("manifest", "manifest")):
        value = getattr(args, attr, None)
        if value is not None:
            stream_cfg[key] = value

    manifest = stream_cfg.get("manifest")
    if manifest is not None:
        base = os.path.dirname(os.path.abspath(manifest))
        tasks = []
        with open(manifest, encoding="utf-8") as fh:
            paths = [line.strip() for line in fh if line.strip()]
        if not paths:
            raise SystemExit(f"manifest {manifest} lists no task files")
        for task_id, rel in enumerate(paths, start=1):
            path = rel if os.path.isabs(rel) else os.path.join(base, rel)
            tasks.append(load_tsv_task(
                path, task_id=task_id, vocab_size=encoder_cfg.vocab_size,
                max_len=encoder_cfg.max_len,
            ))
        return TaskStream(tasks, seed=int(stream_cfg.get("stream_seed", 0)))

    n_tasks = stream_cfg.get("tasks")
    if n_tasks is None:
        raise SystemExit("give --tasks N for a synthetic stream or --manifest FILE")
    return generate_synthetic_stream(
        int(n_tasks),
        seed=int(stream_cfg.get("stream_seed", train_cfg.seed)),
        shared_signal=float(stream_cfg.get("shared_signal", 0.5)),
        domain_drift=float(stream_cfg.get("domain_drift", 0.5)),
        sizes=tuple(stream_cfg.get("sizes", (1400, 200, 400))),
        vocab_size=encoder_cfg.vocab_size,
        max_len=encoder_cfg.max_len,
    )


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _emit_run(out_dir: str, report, matrix) -> None:
    _write(os.path.join(out_dir, "report.json"), report.to_json())
    _write(os.path.join(out_dir, "matrix.csv"), matrix.to_csv())
    lines = []
    curve = report.avg_curve
    for i in range(1, matrix.n_tasks + 1):
        row = {
            "after_task": i,
            "accuracies": [round(matrix.get(i, j), 4) for j in range(1, i + 1)],
            "avg_accuracy": round(curve[i - 1], 4),
        }
        lines.append(json.dumps(row, sort_keys=True))
    _write(os.path.join(out_dir, "metrics.jsonl"), "\n".join(lines) + "\n")
    if report.wall_clock_s is not None:
        _write(os.path.join(out_dir, "report.timing.json"),
               json.dumps({"wall_clock_s": round(report.wall_clock_s, 3)}) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_train(args) -> int:
    config, train_cfg, encoder_cfg, reg_cfg, schedule = _resolve_configs(args)
    stream = _resolve_stream(args, config, encoder_cfg, train_cfg)
    repeats = args.repeats or 1
    finals, backwards = [], []
    for r in range(repeats):
        cfg = dataclasses.replace(train_cfg, seed=train_cfg.seed + r)
        out_dir = args.output_dir if repeats == 1 else os.path.join(
            args.output_dir, f"repeat{r}")
        os.makedirs(out_dir, exist_ok=True)
        started = time.monotonic()
        result = run_stream(stream, cfg, reg_cfg, schedule, encoder_cfg,
                            checkpoint_dir=out_dir)
        elapsed = time.monotonic() - started
        report = build_report(stream, cfg, result, reg_cfg, schedule,
                              encoder_cfg, wall_clock_s=elapsed)
        _emit_run(out_dir, report, result.matrix)
        finals.append(report.final_avg)
        backwards.append(report.backward)
        print(f"seed {cfg.seed}: final avg accuracy "
              f"{report.final_avg:.4f}, backward transfer {report.backward:+.4f}")
        if args.forward_transfer:
            deltas = forward_transfer_vs_reinit(stream, cfg, reg_cfg, schedule,
                                                encoder_cfg, lifelong=result)
            _write(os.path.join(out_dir, "forward_transfer.json"),
                   json.dumps({str(k): v for k, v in deltas.items()},
                              sort_keys=True, indent=2) + "\n")
            for k, v in deltas.items():
                print(f"  forward transfer vs re-init, task {k}: {v:+.4f}")
    if repeats > 1:
        summary = {
            "repeats": repeats,
            "final_avg_accuracy": {"mean": round(float(np.mean(finals)), 4),
                                   "sd": round(float(np.std(finals, ddof=1)), 4),
                                   "values": [round(v, 4) for v in finals]},
            "backward_transfer": {"mean": round(float(np.mean(backwards)), 4),
                                  "sd": round(float(np.std(backwards, ddof=1)), 4),
                                  "values": [round(v, 4) for v in backwards]},
        }
        _write(os.path.join(args.output_dir, "summary.json"),
               json.dumps(summary, sort_keys=True, indent=2) + "\n")
        print(f"final avg accuracy over {repeats} repeats: "
              f"{summary['final_avg_accuracy']['mean']:.4f} "
              f"± {summary['final_avg_accuracy']['sd']:.4f}")
    return 0


def _cmd_eval(args) -> int:
    config, train_cfg, encoder_cfg, _, _ = _resolve_configs(args)
    model = load_checkpoint(args.checkpoint)
    stream = _resolve_stream(args, config, model.config, train_cfg)
    matching = [t for t in stream.tasks if t.task_id == args.task]
    if not matching:
        raise SystemExit(f"task {args.task} not in the stream "
                         f"(ids 1..{len(stream.tasks)})")
    acc = evaluate(model, matching[0], masked=not args.no_mask)
    print(f"task {args.task} ({matching[0].name}): accuracy {acc:.4f}")
    return 0


def _cmd_ablate(args) -> int:
    config, train_cfg, encoder_cfg, reg_cfg, schedule = _resolve_configs(args)
    stream = _resolve_stream(args, config, encoder_cfg, train_cfg)
    os.makedirs(args.output_dir, exist_ok=True)
    reports = ablation_suite(stream, train_cfg, reg_cfg, schedule, encoder_cfg)
    joint = {}
    for name, report in reports.items():
        _emit_run(os.path.join(args.output_dir, name), report, report.matrix)
        joint[name] = {
            "avg_accuracy_curve": [round(v, 4) for v in report.avg_curve],
            "final_avg_accuracy": round(report.final_avg, 4),
            "backward_transfer": round(report.backward, 4),
        }
        print(f"{name:8s} final avg {report.final_avg:.4f}  "
              f"backward {report.backward:+.4f}")
    _write(os.path.join(args.output_dir, "ablation.json"),
           json.dumps(joint, sort_keys=True, indent=2) + "\n")
    return 0


def _cmd_orders(args) -> int:
    config, train_cfg, encoder_cfg, reg_cfg, schedule = _resolve_configs(args)
    stream = _resolve_stream(args, config, encoder_cfg, train_cfg)
    os.makedirs(args.output_dir, exist_ok=True)
    reports = ordering_study(stream, args.n_orders, args.order_seed,
                             train_cfg, reg_cfg, schedule, encoder_cfg)
    finals = []
    rows = []
    for report in reports:
        _emit_run(os.path.join(args.output_dir, report.label), report,
                  report.matrix)
        finals.append(report.final_avg)
        rows.append({"label": report.label, "order": report.order,
                     "final_avg_accuracy": round(report.final_avg, 4)})
        print(f"{report.label}: order {report.order} "
              f"final avg {report.final_avg:.4f}")
    aggregate = {
        "orders": rows,
        "final_avg_accuracy": {
            "mean": round(float(np.mean(finals)), 4),
            "sd": round(float(np.std(finals, ddof=1)), 4) if len(finals) > 1 else 0.0,
        },
    }
    _write(os.path.join(args.output_dir, "orders.json"),
           json.dumps(aggregate, sort_keys=True, indent=2) + "\n")
    print(f"mean final avg over {len(finals)} orders: "
          f"{aggregate['final_avg_accuracy']['mean']:.4f}")
    return 0


def _cmd_gradcheck(args) -> int:
    failures = 0
    for name, err in run_gradient_suite(seed=args.seed):
        status = "ok" if err < 1e-3 else "FAIL"
        if err >= 1e-3:
            failures += 1
        print(f"{name:32s} max rel err {err:.3e}  {status}")
    if failures:
        print(f"{failures} gradient check(s) above 1e-3")
        return 1
    print("all gradient checks below 1e-3")
    return 0


def _cmd_gen_data(args) -> int:
    tasks = generate_synthetic_texts(
        args.tasks, seed=args.stream_seed,
        shared_signal=args.shared_signal if args.shared_signal is not None else 0.5,
        domain_drift=args.domain_drift if args.domain_drift is not None else 0.5,
        sizes=tuple(args.sizes),
    )
    os.makedirs(args.output_dir, exist_ok=True)
    filenames = []
    for t, (name, splits) in enumerate(tasks, start=1):
        filename = f"task{t:02d}.tsv"
        filenames.append(filename)
        lines = [f"{label}\t{text}" for split in splits for text, label in split]
        _write(os.path.join(args.output_dir, filename), "\n".join(lines) + "\n")
        print(f"{filename}: {len(lines)} examples ({name})")
    _write(os.path.join(args.output_dir, "manifest.txt"),
           "\n".join(filenames) + "\n")
    print(f"manifest.txt lists {len(filenames)} tasks in stream order")
    return 0


def _cmd_report(args) -> int:
    with open(args.input, encoding="utf-8") as fh:
        data = json.load(fh)
    names = data.get("task_names", [])
    matrix = data["transfer_matrix"]
    print(f"run {data.get('label', '?')}  seed {data.get('seed', '?')}")
    print(f"tasks: {', '.join(names)}")
    header = "after | " + " ".join(f"task{j + 1:>2d}" for j in range(len(matrix)))
    print(header)
    for i, row in enumerate(matrix):
        cells = " ".join("      " if v is None else f"{v:6.4f}" for v in row)
        print(f"{i + 1:5d} | {cells}")
    curve = data["avg_accuracy_curve"]
    print("avg accuracy curve: " + " ".join(f"{v:.4f}" for v in curve))
    print(f"final avg accuracy: {data['final_avg_accuracy']:.4f}")
    print(f"backward transfer:  {data['backward_transfer']:+.4f}")
    return 0


# ---------------------------------------------------------------------------
# gradient suite (used by the gradcheck subcommand and the test gate)


def _suite_matrix(rng, d_out=3, d_in=4, layer_index=0):
    m = MeanFieldMatrix(f"suite{layer_index}", d_out, d_in,
                        layer_index=layer_index, rng=rng, init_scale=0.5)
    snapshot_after_task(m)
    m.phi = (m.phi + rng.uniform(0.1, 0.3, size=m.phi.shape).astype(np.float32))
    m.rho = (m.rho + rng.uniform(-0.2, 0.2, size=m.rho.shape).astype(np.float32))
    return m


def run_gradient_suite(seed: int = 0) -> list[tuple[str, float]]:
    """Finite-difference checks over ops, regularizers, and the joint loss.

    Returns (check name, max relative error) pairs; every error is
    expected below 1e-3.  Uses float64 probes so the finite-difference
    noise stays under the tolerance.
    """
    from .meanfield import reg1, reg2, reg3

    rng = np.random.default_rng([seed, 0x6C])
    results = []

    def randt(*shape, scale=1.0):
        return ad.Tensor(rng.uniform(-scale, scale, size=shape))

    def check(name, fn, x):
        results.append((name, ad.grad_check(fn, x)))

    mix = randt(5, 4)
    mm_rhs = randt(6, 4)
    mm_mix = randt(5, 4)
    check("matmul", lambda t: (ad.matmul(t, mm_rhs) * mm_mix).sum(),
          randt(5, 6))
    check("softmax", lambda t: (ad.softmax(t, axis=-1) * mix).sum(), randt(5, 4))
    ln_gain = randt(4)
    ln_bias = randt(4)
    check("layer_norm",
          lambda t: (ad.layer_norm(t, ln_gain, ln_bias) * mix).sum(),
          randt(5, 4))
    check("gelu", lambda t: (ad.gelu(t) * mix).sum(), randt(5, 4))
    labels = np.array([0, 1, 1, 0, 1])
    check("cross_entropy", lambda t: ad.cross_entropy(t, labels), randt(5, 2))

    m1 = _suite_matrix(rng, 3, 4, 0)
    m2 = _suite_matrix(rng, 4, 3, 1)
    cfg = RegConfig()

    def phi_leaf(m):
        return ad.Tensor(m.phi.astype(np.float64))

    def rho_leaf(m):
        return ad.Tensor(m.rho.astype(np.float64))

    check("reg1_phi", lambda t: reg1(m1, cfg, phi=t), phi_leaf(m1))
    check("reg1_lower_phi",
          lambda t: reg1(m2, cfg, sigma_lower_prev=m1.sigma_prev, phi=t),
          phi_leaf(m2))
    check("reg2_phi", lambda t: reg2(m1, cfg, phi=t), phi_leaf(m1))
    check("reg3_rho", lambda t: reg3(m1, rho=t), rho_leaf(m1))
    check("total_reg_phi",
          lambda t: total_reg([m1, m2], cfg,
                              live={"suite0": (t, rho_leaf(m1))}),
          phi_leaf(m1))
    check("total_reg_rho",
          lambda t: total_reg([m1, m2], cfg,
                              live={"suite1": (phi_leaf(m2), t)}),
          rho_leaf(m2))

    def layer_tensors(d=4, n_heads=2, d_ff=8):
        def t(*shape):
            return ad.Tensor(rng.uniform(-0.4, 0.4, size=shape))

        return enc.LayerTensors(
            wq=t(d, d), wk=t(d, d), wv=t(d, d), wc=t(d, d),
            wf1=t(d_ff, d), wf2=t(d, d_ff), b1=t(d_ff), b2=t(d),
            ln1_gain=ad.Tensor(np.ones(d)), ln1_bias=t(d),
            ln2_gain=ad.Tensor(np.ones(d)), ln2_bias=t(d),
            n_heads=n_heads, activation="gelu",
        )

    lt = layer_tensors()
    pt = enc.PrfTensors(
        w_down=randt(2, 4, scale=0.5), w_up=randt(4, 2, scale=0.5),
        layer_attn=[tuple(randt(2, 2, scale=0.5) for _ in range(4))],
        n_heads=1,
    )
    out_mix = randt(3, 4)
    h0 = randt(3, 4)
    check("attention_input",
          lambda t: (enc.multi_head_attention(t, lt.wq, lt.wk, lt.wv, lt.wc, 2)
                     * out_mix).sum(), h0)
    check("ipr_layer_input",
          lambda t: (enc.ipr_layer(t, lt, pt, 0) * out_mix).sum(), h0)

    def wq_fn(t):
        lt.wq = t
        return (enc.ipr_layer(h0, lt, pt, 0) * out_mix).sum()

    check("ipr_layer_wq", wq_fn, ad.Tensor(lt.wq.data.copy()))

    # joint objective: cross-entropy through a linear transform of the
    # regularized weights plus the drift penalties on the same matrix
    mj = _suite_matrix(rng, 2, 4, 0)
    x = randt(6, 4)
    y = np.array([0, 1, 0, 1, 1, 0])

    def joint(t):
        logits = ad.matmul(x, ad.transpose(t, (1, 0)))
        return ad.cross_entropy(logits, y) + total_reg(
            [mj], cfg, live={mj.name: (t, rho_leaf(mj))})

    check("joint_ce_plus_reg", joint, phi_leaf(mj))
    return results


# ---------------------------------------------------------------------------
# argument parsing


def _add_common_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--epochs-initial", dest="epochs_initial", type=int)
    p.add_argument("--epochs-retrain", dest="epochs_retrain", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr-main-initial", dest="lr_main_initial", type=float)
    p.add_argument("--lr-main-retrain", dest="lr_main_retrain", type=float)
    p.add_argument("--lr-prf-initial", dest="lr_prf_initial", type=float)
    p.add_argument("--lr-prf-retrain", dest="lr_prf_retrain", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--no-prune", dest="no_prune", action="store_const", const=True)
    p.add_argument("--no-reg", dest="no_reg", action="store_const", const=True)
    p.add_argument("--no-prf", dest="no_prf", action="store_const", const=True)
    p.add_argument("--freeze-preserved", dest="freeze_preserved",
                   action="store_const", const=True)
    p.add_argument("--shared-ownership", dest="shared_ownership",
                   action="store_const", const=True,
                   help="sequential fine-tuning: warm-start each head and "
                        "score old tasks through the newest parameters")
    p.add_argument("--d-m", dest="d_m", type=int)
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--n-layers", dest="n_layers", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--d-ff", dest="d_ff", type=int)
    p.add_argument("--d-p", dest="d_p", type=int)
    p.add_argument("--n-heads-p", dest="n_heads_p", type=int)
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--upsilon", type=float)
    p.add_argument("--sigma-init", dest="sigma_init", type=float)
    p.add_argument("--first-fraction", dest="first_fraction", type=float)
    p.add_argument("--later-fraction", dest="later_fraction", type=float)


def _add_stream_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tasks", type=int, help="synthetic stream length")
    p.add_argument("--stream-seed", dest="stream_seed", type=int)
    p.add_argument("--shared-signal", dest="shared_signal", type=float)
    p.add_argument("--domain-drift", dest="domain_drift", type=float)
    p.add_argument("--sizes", type=int, nargs=3, default=None,
                   metavar=("TRAIN", "DEV", "TEST"),
                   help="synthetic split sizes per task")
    p.add_argument("--manifest", help="file listing task TSVs in stream order")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prunestream",
        description="Lifelong text classification with iterative pruning "
                    "and uncertainty regularization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a task stream")
    _add_common_config_flags(p)
    _add_stream_flags(p)
    p.add_argument("--output-dir", dest="output_dir", default="run")
    p.add_argument("--repeats", type=int, default=None,
                   help="run N seeds and report mean ± sd")
    p.add_argument("--forward-transfer", dest="forward_transfer",
                   action="store_true",
                   help="also compute per-task gains over re-init baselines")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one task")
    _add_common_config_flags(p)
    _add_stream_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", type=int, required=True)
    p.add_argument("--no-mask", dest="no_mask", action="store_true",
                   help="skip inference masking (for runs trained --no-prune)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="full run plus the three ablations")
    _add_common_config_flags(p)
    _add_stream_flags(p)
    p.add_argument("--output-dir", dest="output_dir", default="ablation")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("orders", help="re-run under sampled task orders")
    _add_common_config_flags(p)
    _add_stream_flags(p)
    p.add_argument("--output-dir", dest="output_dir", default="orders")
    p.add_argument("--n-orders", dest="n_orders", type=int, default=5)
    p.add_argument("--order-seed", dest="order_seed", type=int, default=0)
    p.set_defaults(func=_cmd_orders)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("gen-data", help="write a synthetic stream as TSV files")
    p.add_argument("--tasks", type=int, required=True)
    p.add_argument("--stream-seed", dest="stream_seed", type=int, default=0)
    p.add_argument("--shared-signal", dest="shared_signal", type=float)
    p.add_argument("--domain-drift", dest="domain_drift", type=float)
    p.add_argument("--sizes", type=int, nargs=3, default=(1400, 200, 400),
                   metavar=("TRAIN", "DEV", "TEST"))
    p.add_argument("--output-dir", dest="output_dir", default="data")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("report", help="print a stored report")
    p.add_argument("--input", required=True, help="path to a report.json")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
