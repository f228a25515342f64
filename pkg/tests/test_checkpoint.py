"""Tests for checkpoint serialization: round trips and corruption."""

import numpy as np
import pytest

from prunestream.checkpoint import (
    MAGIC,
    VERSION,
    checkpoint_bytes,
    load_checkpoint,
    save_checkpoint,
)
from prunestream.data import generate_synthetic_stream
from prunestream.encoder import EncoderConfig
from prunestream.metrics import evaluate
from prunestream.training import TrainConfig, run_stream

TINY_ENC = EncoderConfig(d_m=16, n_heads=2, n_layers=1, max_len=16,
                         vocab_size=512)


@pytest.fixture(scope="module")
def trained():
    stream = generate_synthetic_stream(
        2, seed=0, sizes=(48, 8, 16),
        vocab_size=TINY_ENC.vocab_size, max_len=TINY_ENC.max_len,
    )
    cfg = TrainConfig(epochs_initial=1, epochs_retrain=1, batch_size=16)
    return stream, run_stream(stream, cfg, encoder_cfg=TINY_ENC)


class TestRoundTrip:
    def test_save_load_save_is_byte_identical(self, trained, tmp_path):
        _, result = trained
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(result.model, path)
        reloaded = load_checkpoint(path)
        assert checkpoint_bytes(reloaded) == checkpoint_bytes(result.model)

    def test_loaded_model_scores_identically(self, trained, tmp_path):
        stream, result = trained
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(result.model, path)
        reloaded = load_checkpoint(path)
        for task in stream.tasks:
            ids = np.asarray([ex.token_ids for ex in task.test])
            np.testing.assert_array_equal(
                reloaded.forward_eval(ids, task.task_id),
                result.model.forward_eval(ids, task.task_id),
            )
            assert evaluate(reloaded, task) == evaluate(result.model, task)

    def test_ownership_and_log_survive(self, trained, tmp_path):
        _, result = trained
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(result.model, path)
        reloaded = load_checkpoint(path)
        assert reloaded.ownership.tasks_completed == 2
        assert (len(reloaded.ownership.prune_log)
                == len(result.model.ownership.prune_log))
        first = reloaded.ownership.prune_log[0]
        assert (first.task, first.fraction) == (1, 0.40)
        for name, labels in result.model.ownership.labels.items():
            np.testing.assert_array_equal(
                reloaded.ownership.labels[name], labels)

    def test_snapshots_survive(self, trained, tmp_path):
        _, result = trained
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(result.model, path)
        reloaded = load_checkpoint(path)
        assert sorted(reloaded.snapshots) == sorted(result.model.snapshots)
        for task_id, snap in result.model.snapshots.items():
            assert sorted(reloaded.snapshots[task_id]) == sorted(snap)
            for name, arr in snap.items():
                np.testing.assert_array_equal(
                    reloaded.snapshots[task_id][name], arr)


class TestCorruption:
    def _blob(self, trained):
        _, result = trained
        return checkpoint_bytes(result.model)

    def _write(self, tmp_path, blob):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(blob)
        return str(path)

    def test_bad_magic(self, trained, tmp_path):
        blob = b"NOPE" + self._blob(trained)[4:]
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(self._write(tmp_path, blob))

    def test_unsupported_version(self, trained, tmp_path):
        import struct

        blob = self._blob(trained)
        bad = MAGIC + struct.pack("<I", VERSION + 1) + blob[8:]
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(self._write(tmp_path, bad))

    def test_truncated_header(self, trained, tmp_path):
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(self._write(tmp_path, self._blob(trained)[:20]))

    def test_truncated_payload(self, trained, tmp_path):
        blob = self._blob(trained)
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(self._write(tmp_path, blob[:-3]))

    def test_trailing_bytes(self, trained, tmp_path):
        blob = self._blob(trained) + b"\x00\x00"
        with pytest.raises(ValueError, match="trailing"):
            load_checkpoint(self._write(tmp_path, blob))

    def test_empty_file(self, tmp_path):
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(self._write(tmp_path, b""))
