"""Binary checkpoints for the full model state.

Layout: the magic bytes ``IPRL``, a version word, a JSON header (config,
task registry, the pruning log, and a directory of named records), then
the raw little-endian payload of every record in directory order.

Records cover the mean weights and log-deviations with their snapshots,
the plain layer parameters, per-task heads and PRF weights, the
per-task parameter snapshots used for old-task inference, and the
ownership labels as unsigned 16-bit values (FREE = 0xFFFF).  Everything
a run produced is restored, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from .encoder import EncoderConfig, EncoderModel
from .ownership import PruneRecord

MAGIC = b"IPRL"
VERSION = 1

_F32 = "<f4"
_U16 = "<u2"


def _record_bytes(arr: np.ndarray, dtype: str) -> bytes:
    return np.ascontiguousarray(arr, dtype=dtype).tobytes()


def _model_records(model: EncoderModel):
    """Yield (name, dtype, array) for every stored array, in a fixed order."""
    yield "embedding", _F32, model.embedding
    yield "positional", _F32, model.positional
    for m in model.matrices():
        yield f"{m.name}.phi", _F32, m.phi
        yield f"{m.name}.rho", _F32, m.rho
        if m.phi_prev is not None:
            yield f"{m.name}.phi_prev", _F32, m.phi_prev
            yield f"{m.name}.sigma_prev", _F32, m.sigma_prev
    for layer in model.layers:
        for name, arr in layer.plain_params().items():
            yield name, _F32, arr
    for task_id in sorted(model.heads):
        for name, arr in model.heads[task_id].plain_params().items():
            yield name, _F32, arr
    for task_id in sorted(model.prf_params):
        for name, arr in model.prf_params[task_id].arrays.items():
            yield name, _F32, arr
    for task_id in sorted(model.snapshots):
        snap = model.snapshots[task_id]
        for name in sorted(snap):
            yield f"snap{task_id}.{name}", _F32, snap[name]
    for name in model.ownership.labels:
        yield f"owner.{name}", _U16, model.ownership.labels[name]


def checkpoint_bytes(model: EncoderModel) -> bytes:
    directory = []
    payload = bytearray()
    for name, dtype, arr in _model_records(model):
        directory.append([name, dtype, list(arr.shape)])
        payload.extend(_record_bytes(arr, dtype))
    header = {
        "config": dataclasses.asdict(model.config),
        "sigma_init": model.sigma_init,
        "model_seed": model.seed,
        "tasks_completed": model.ownership.tasks_completed,
        "head_task_ids": sorted(model.heads),
        "prf_task_ids": sorted(model.prf_params),
        "snapshot_task_ids": sorted(model.snapshots),
        "prune_log": [
            [r.task, r.matrix, r.candidates, r.freed, r.fraction]
            for r in model.ownership.prune_log
        ],
        "records": directory,
    }
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode("utf-8")
    return (MAGIC + struct.pack("<II", VERSION, len(header_bytes))
            + header_bytes + bytes(payload))


def save_checkpoint(model: EncoderModel, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def _parse_header(blob: bytes) -> tuple[dict, int]:
    if len(blob) < 12:
        raise ValueError("checkpoint truncated: missing header")
    if blob[:4] != MAGIC:
        raise ValueError(f"bad magic {blob[:4]!r}; not a checkpoint file")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    end = 12 + header_len
    if len(blob) < end:
        raise ValueError("checkpoint truncated: incomplete header")
    return json.loads(blob[12:end].decode("utf-8")), end


def load_checkpoint(path: str) -> EncoderModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    header, offset = _parse_header(blob)

    config = EncoderConfig(**header["config"])
    model = EncoderModel(config, seed=header["model_seed"],
                         sigma_init=header["sigma_init"])
    prf_ids = set(header["prf_task_ids"])
    registry_rng = np.random.default_rng(0)
    for task_id in header["head_task_ids"]:
        model.register_task(task_id, registry_rng, with_prf=task_id in prf_ids)
    for task_id in header["snapshot_task_ids"]:
        model.snapshots[task_id] = {}

    targets = _assignment_targets(model)
    for name, dtype, shape in header["records"]:
        shape = tuple(shape)
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        if offset + nbytes > len(blob):
            raise ValueError(f"checkpoint truncated in record {name!r}")
        arr = np.frombuffer(blob[offset : offset + nbytes],
                            dtype=dtype).reshape(shape).copy()
        offset += nbytes
        _assign(model, targets, name, arr)
    if offset != len(blob):
        raise ValueError(f"{len(blob) - offset} trailing bytes after last record")

    model.ownership.tasks_completed = header["tasks_completed"]
    model.ownership.prune_log = [
        PruneRecord(task, matrix, candidates, freed, fraction)
        for task, matrix, candidates, freed, fraction in header["prune_log"]
    ]
    return model


def _assignment_targets(model: EncoderModel) -> dict[str, np.ndarray]:
    """In-place destinations for all fixed-slot records."""
    targets: dict[str, np.ndarray] = {
        "embedding": model.embedding,
        "positional": model.positional,
    }
    for layer in model.layers:
        targets.update(layer.plain_params())
    for head in model.heads.values():
        targets.update(head.plain_params())
    for prf in model.prf_params.values():
        targets.update(prf.arrays)
    for name, labels in model.ownership.labels.items():
        targets[f"owner.{name}"] = labels
    return targets


def _assign(model: EncoderModel, targets: dict[str, np.ndarray],
            name: str, arr: np.ndarray) -> None:
    if name in targets:
        dest = targets[name]
        if dest.shape != arr.shape:
            raise ValueError(f"record {name!r}: shape {arr.shape} != {dest.shape}")
        dest[...] = arr
        return
    if name.startswith("snap"):
        task_part, param_name = name.split(".", 1)
        model.snapshots[int(task_part[4:])][param_name] = arr
        return
    base, field = name.rsplit(".", 1)
    matrix = next((m for m in model.matrices() if m.name == base), None)
    if matrix is None or field not in ("phi", "rho", "phi_prev", "sigma_prev"):
        raise ValueError(f"unknown checkpoint record {name!r}")
    if field == "phi":
        matrix.phi[...] = arr
    elif field == "rho":
        matrix.rho[...] = arr
    else:
        setattr(matrix, field, arr)
