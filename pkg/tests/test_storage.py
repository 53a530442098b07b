import struct
import tempfile
import unittest
from pathlib import Path

import numpy as np

from models.errors import CorpusError
from storage.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from storage.images import find_image, image_size, load_image, save_image


def sample_payload():
    meta = {"kind": "tagger", "note": "café"}
    tensors = [("a", np.arange(6.0).reshape(2, 3)), ("b", np.array(2.5)), ("c", np.zeros((0, 4)))]
    return meta, tensors


class TestCheckpoint(unittest.TestCase):
    def test_layout(self):
        raw = encode_checkpoint(*sample_payload())
        self.assertEqual(raw[:8], MAGIC)
        (length,) = struct.unpack("<Q", raw[8:16])
        self.assertEqual(len(raw), 16 + length + 8 * 7)
        self.assertEqual(raw[-8:], struct.pack("<d", 2.5))

    def test_decode(self):
        meta, tensors = decode_checkpoint(encode_checkpoint(*sample_payload()))
        self.assertEqual(meta["note"], "café")
        self.assertEqual([t["name"] for t in meta["tensors"]], ["a", "b", "c"])
        np.testing.assert_array_equal(tensors["a"], np.arange(6.0).reshape(2, 3))
        self.assertEqual(tensors["b"].shape, ())
        self.assertEqual(tensors["c"].shape, (0, 4))

    def test_deterministic(self):
        self.assertEqual(encode_checkpoint(*sample_payload()), encode_checkpoint(*sample_payload()))

    def test_bad_magic(self):
        raw = encode_checkpoint(*sample_payload())
        with self.assertRaises(CorpusError):
            decode_checkpoint(b"NOTATAG1" + raw[8:])

    def test_truncated(self):
        raw = encode_checkpoint(*sample_payload())
        for cut in (10, 20, len(raw) - 1):
            with self.subTest(cut=cut), self.assertRaises(CorpusError):
                decode_checkpoint(raw[:cut])

    def test_trailing_bytes(self):
        with self.assertRaises(CorpusError):
            decode_checkpoint(encode_checkpoint(*sample_payload()) + b"\x00")

    def test_save_and_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(Path(tmp) / "run" / "model.boxtag", *sample_payload())
            self.assertFalse(path.with_suffix(".boxtag.tmp").exists())
            meta, tensors = load_checkpoint(path)
            self.assertEqual(meta["kind"], "tagger")
            with self.assertRaises(FileNotFoundError):
                load_checkpoint(Path(tmp) / "missing.boxtag")


class TestImages(unittest.TestCase):
    def test_round_trip(self):
        raster = np.zeros((4, 6, 3))
        raster[:, 3:] = 1.0
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "page.png"
            save_image(path, raster)
            self.assertEqual(image_size(path), (6, 4))
            np.testing.assert_array_equal(load_image(path), raster)

    def test_upscaled_save(self):
        raster = np.array([[0.0, 1.0]])
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "page.png"
            save_image(path, raster, size=(8, 4))
            loaded = load_image(path)
            self.assertEqual(loaded.shape, (4, 8, 3))
            np.testing.assert_array_equal(loaded[:, :4], 0.0)
            np.testing.assert_array_equal(loaded[:, 4:], 1.0)

    def test_find_image(self):
        with tempfile.TemporaryDirectory() as tmp:
            folder = Path(tmp)
            self.assertIsNone(find_image(folder, "inv"))
            save_image(folder / "inv.png", np.ones((2, 2)))
            self.assertEqual(find_image(folder, "inv"), folder / "inv.png")


if __name__ == "__main__":
    unittest.main()
