import os
import struct
import sys
import tempfile
import unittest

import numpy as np

# Add the project root to sys.path so we can import condensegan_app
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from condensegan_app.constants import CHECKPOINT_MAGIC, CLASS_COLORS, REPORT_HEADERS
from condensegan_app.core.optim import AdamState
from condensegan_app.dataio import (
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    epoch_order,
    gen_synthetic_pairs,
    iterate_batches,
    load_checkpoint,
    read_report,
    save_checkpoint,
    split_pairs,
    write_report,
)
from condensegan_app.errors import (
    CheckpointCorruptError,
    CheckpointFormatError,
    ConfigurationError,
    UnsupportedVersionError,
)
from condensegan_app.netgraph import build_patchgan, build_unet


def sample_checkpoint():
    generator = build_unet(4, 2, 8, 8, seed=1)
    discriminator = build_patchgan(6, base_channels=2, seed=2)
    state = AdamState.for_params(generator.parameters())
    rng = np.random.default_rng(0)
    state.first_moment = [rng.standard_normal(m.shape).astype(np.float32) for m in state.first_moment]
    state.second_moment = [rng.uniform(0, 1, m.shape).astype(np.float32) for m in state.second_moment]
    state.step_count = 7
    return Checkpoint(
        graphs={"generator": generator, "discriminator": discriminator},
        optimizer_states={"generator": state},
        metadata={"stage": "1", "alpha": repr(0.125)},
    )


class TestSyntheticPairs(unittest.TestCase):

    def test_shapes_and_ranges(self):
        samples = gen_synthetic_pairs(0, 5, 16, 2)
        self.assertEqual(len(samples), 5)
        for sample in samples:
            self.assertEqual(sample.mask.shape, (1, len(CLASS_COLORS), 16, 16))
            self.assertEqual(sample.image.shape, (1, 3, 16, 16))
            self.assertTrue(np.isin(sample.mask.data, (0.0, 1.0)).all())
            self.assertLessEqual(sample.mask.data.sum(axis=1).max(), 1.0)
            self.assertLessEqual(np.abs(sample.image.data).max(), 1.0)
            self.assertGreater(sample.mask.data.sum(), 0)

    def test_seeded_and_isolated(self):
        first = gen_synthetic_pairs(4, 3, 8)
        np.random.seed(123)
        np.random.random(10)
        second = gen_synthetic_pairs(4, 3, 8)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.mask.data, b.mask.data)
            np.testing.assert_array_equal(a.image.data, b.image.data)
        other = gen_synthetic_pairs(5, 3, 8)
        self.assertFalse(all(np.array_equal(a.image.data, b.image.data) for a, b in zip(first, other)))

    def test_errors(self):
        with self.assertRaises(ConfigurationError):
            gen_synthetic_pairs(0, -1, 8)
        with self.assertRaises(ConfigurationError):
            gen_synthetic_pairs(0, 2, 12, 3)
        self.assertEqual(gen_synthetic_pairs(0, 0, 8), [])

    def test_split_and_batches(self):
        samples = gen_synthetic_pairs(1, 5, 8)
        train, holdout = split_pairs(samples, 2)
        self.assertEqual((len(train), len(holdout)), (3, 2))
        self.assertIs(holdout[-1], samples[-1])
        with self.assertRaises(ConfigurationError):
            split_pairs(samples, 6)
        batches = list(iterate_batches(train, 2, seed=0, epoch=0))
        self.assertEqual([b[0].shape[0] for b in batches], [2, 1])
        self.assertEqual(sorted(epoch_order(0, 0, 3).tolist()), [0, 1, 2])
        np.testing.assert_array_equal(epoch_order(9, 2, 10), epoch_order(9, 2, 10))


class TestCheckpointCodec(unittest.TestCase):

    def test_round_trip(self):
        original = sample_checkpoint()
        restored = decode_checkpoint(encode_checkpoint(original))
        self.assertEqual(restored.metadata, original.metadata)
        for name, graph in original.graphs.items():
            clone = restored.graphs[name]
            self.assertEqual(clone.layers, sorted(graph.layers, key=lambda spec: spec.id))
            self.assertEqual(sorted(clone.skip_edges), sorted(graph.skip_edges))
            for layer_id, weight in graph.weights.items():
                np.testing.assert_array_equal(clone.weights[layer_id].data, weight.data)
                self.assertTrue(clone.weights[layer_id].requires_grad)
        state, clone_state = original.optimizer_states["generator"], restored.optimizer_states["generator"]
        self.assertEqual(clone_state.step_count, 7)
        for m, clone_m in zip(state.first_moment, clone_state.first_moment):
            np.testing.assert_array_equal(clone_m, m)
        self.assertTrue(clone_state.matches(restored.graphs["generator"].parameters()))

    def test_encoding_is_stable(self):
        self.assertEqual(encode_checkpoint(sample_checkpoint()), encode_checkpoint(sample_checkpoint()))

    def test_wrong_magic(self):
        with self.assertRaises(CheckpointFormatError):
            decode_checkpoint(b"PK\x03\x04" + bytes(20))

    def test_magic_prefix_is_truncation(self):
        with self.assertRaises(CheckpointCorruptError):
            decode_checkpoint(CHECKPOINT_MAGIC[:4])

    def test_newer_version(self):
        data = bytearray(encode_checkpoint(sample_checkpoint()))
        data[len(CHECKPOINT_MAGIC) : len(CHECKPOINT_MAGIC) + 4] = struct.pack("<I", 2)
        with self.assertRaises(UnsupportedVersionError) as ctx:
            decode_checkpoint(bytes(data))
        self.assertEqual(ctx.exception.details["version"], 2)

    def test_truncated_and_trailing(self):
        data = encode_checkpoint(sample_checkpoint())
        for cut in (len(CHECKPOINT_MAGIC) + 2, len(data) // 2, len(data) - 1):
            with self.subTest(cut=cut), self.assertRaises(CheckpointCorruptError):
                decode_checkpoint(data[:cut])
        with self.assertRaises(CheckpointCorruptError):
            decode_checkpoint(data + b"\x00")

    def test_save_and_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "nested", "model.ckpt")
            save_checkpoint(path, sample_checkpoint())
            self.assertEqual(os.listdir(os.path.dirname(path)), ["model.ckpt"])
            restored = load_checkpoint(path)
        self.assertEqual(restored.metadata["alpha"], "0.125")


class TestReports(unittest.TestCase):

    def test_header_only_report(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "hinges.csv")
            write_report(path, "hinge", [])
            with open(path, "rb") as stream:
                self.assertEqual(stream.read(), (",".join(REPORT_HEADERS["hinge"]) + "\n").encode())

    def test_formatting_and_reading(self):
        rows = [
            {"layer_id": 0, "out_ch": 4, "keep_count": 2, "method": "max_ratio_drop", "drop_ratio": 0.1},
            {"layer_id": 1, "out_ch": 8, "keep_count": 8, "method": "max_ratio_drop", "drop_ratio": None},
        ]
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "hinges.csv")
            write_report(path, "hinge", rows)
            with open(path, "rb") as stream:
                raw = stream.read()
            header, records = read_report(path)
            again = os.path.join(tmp, "again.csv")
            write_report(again, "hinge", rows)
            with open(again, "rb") as stream:
                self.assertEqual(stream.read(), raw)
        self.assertNotIn(b"\r", raw)
        self.assertEqual(header, REPORT_HEADERS["hinge"])
        self.assertEqual(records[0]["drop_ratio"], "0.1")
        self.assertEqual(records[1]["drop_ratio"], "")

    def test_unknown_kind(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigurationError):
                write_report(os.path.join(tmp, "x.csv"), "nope", [])


if __name__ == '__main__':
    unittest.main()
