import tempfile
import unittest
from pathlib import Path

import numpy as np

from features.visual import (
    ImageCrop,
    VisualEncoder,
    VisualEncoderConfig,
    crop_and_resize,
    load_precomputed,
    pretrain_encoder,
    resize_bilinear,
    visual_embed,
)
from models.errors import ParseError, ShapeError
from models.invoice import BoundingBox
from neural.gradcheck import grad_check


def rect(x0, y0, x1, y1, text="X"):
    return BoundingBox.from_coords([x0, y0, x1, y0, x1, y1, x0, y1], text)


def small_encoder(seed=0):
    cfg = VisualEncoderConfig(crop_h=4, crop_w=6, channels=1, out_dim=3, conv_layers=[(2, 3, 1), (2, 3, 2)])
    return VisualEncoder(cfg, np.random.default_rng(seed))


class TestCrop(unittest.TestCase):
    def test_constant_image(self):
        image = np.full((40, 60, 3), 0.5)
        crop = crop_and_resize(image, rect(5, 5, 30, 15), VisualEncoderConfig(crop_h=8, crop_w=16))
        self.assertTrue(crop.present)
        self.assertEqual(crop.pixels.shape, (8, 16, 1))
        np.testing.assert_allclose(crop.pixels, 0.5)

    def test_missing_image(self):
        crop = crop_and_resize(None, rect(5, 5, 30, 15), VisualEncoderConfig(crop_h=8, crop_w=16))
        self.assertFalse(crop.present)
        self.assertFalse(np.any(crop.pixels))

    def test_degenerate_box(self):
        crop = crop_and_resize(np.ones((10, 10)), rect(3, 3, 3, 8), VisualEncoderConfig(crop_h=2, crop_w=2))
        self.assertFalse(crop.present)

    def test_downscaled_raster(self):
        # left half black, right half white, raster at a quarter of the page size
        raster = np.ones((25, 50, 1))
        raster[:, :25] = 0.0
        cfg = VisualEncoderConfig(crop_h=2, crop_w=2)
        left = crop_and_resize(raster, rect(0, 0, 80, 40), cfg, page_width=200, page_height=100)
        right = crop_and_resize(raster, rect(120, 0, 200, 40), cfg, page_width=200, page_height=100)
        np.testing.assert_allclose(left.pixels, 0.0)
        np.testing.assert_allclose(right.pixels, 1.0)

    def test_bilinear_checkerboard(self):
        region = np.array([[0.0, 1.0], [1.0, 0.0]])[:, :, None]
        out = resize_bilinear(region, 4, 4)[:, :, 0]
        third = 1.0 / 3.0
        expected = np.array(
            [
                [0.0, third, 2 * third, 1.0],
                [third, 4 / 9, 5 / 9, 2 * third],
                [2 * third, 5 / 9, 4 / 9, third],
                [1.0, 2 * third, third, 0.0],
            ]
        )
        np.testing.assert_allclose(out, expected, atol=1e-12)


class TestEncoder(unittest.TestCase):
    def test_zero_network(self):
        encoder = small_encoder()
        for p in encoder.parameters():
            p.value[...] = 0.0
        crop = ImageCrop(np.random.default_rng(1).uniform(size=(4, 6, 1)), True)
        np.testing.assert_array_equal(visual_embed(crop, encoder), np.zeros(3))

    def test_absent_crop_is_zero(self):
        encoder = small_encoder()
        for p in encoder.parameters():
            p.value[...] = 1.0
        crop = ImageCrop(np.zeros((4, 6, 1)), False)
        np.testing.assert_array_equal(visual_embed(crop, encoder), np.zeros(3))

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            visual_embed(ImageCrop(np.zeros((5, 6, 1)), True), small_encoder())

    def test_constants_distinguished(self):
        encoder = small_encoder()
        for layer in encoder.layers:
            layer.W.value[...] = 0.1
        encoder.dense.W.value[...] = 0.1
        encoder.dense.b.value[...] = 0.5
        dark = visual_embed(ImageCrop(np.full((4, 6, 1), 0.2), True), encoder)
        light = visual_embed(ImageCrop(np.full((4, 6, 1), 0.8), True), encoder)
        self.assertTrue(np.all(light > dark))

    def test_gradients(self):
        encoder = small_encoder(seed=3)
        rng = np.random.default_rng(3)
        for p in encoder.parameters():
            p.value[...] = rng.normal(0.0, 0.5, p.shape)
        crops = rng.uniform(size=(2, 4, 6, 1))
        weights = rng.normal(size=(2, 3))

        def loss():
            out, trace = encoder.forward(crops)
            encoder.backward(trace, weights)
            return float(np.sum(out * weights))

        self.assertLess(grad_check(loss, encoder.parameters()), 1e-4)

    def test_pretraining_reduces_loss(self):
        encoder = small_encoder(seed=4)
        rng = np.random.default_rng(4)
        crops = np.concatenate([np.full((8, 4, 6, 1), 0.1), np.full((8, 4, 6, 1), 0.9)])
        crops += rng.normal(0.0, 0.01, crops.shape)
        labels = np.array([0] * 8 + [4] * 8)
        history = pretrain_encoder(crops, labels, encoder, epochs=30, lr=1e-2, batch_size=8, seed=0)
        self.assertEqual(len(history), 30)
        self.assertLess(history[-1], history[0])


class TestPrecomputed(unittest.TestCase):
    def write(self, content):
        handle = tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False, encoding="utf-8")
        handle.write(content)
        handle.close()
        self.addCleanup(Path(handle.name).unlink)
        return Path(handle.name)

    def test_lookup(self):
        table = load_precomputed(self.write("invoice_id,box_index,v0,v1\ninv1,0,1.0,2.0\n"))
        self.assertEqual(table.dim, 2)
        np.testing.assert_array_equal(table.lookup("inv1", 0), [1.0, 2.0])
        self.assertIsNone(table.lookup("inv1", 1))

    def test_ragged_row(self):
        with self.assertRaises(ParseError) as ctx:
            load_precomputed(self.write("invoice_id,box_index,v0,v1\ninv1,0,1.0\n"))
        self.assertEqual(ctx.exception.line, 2)


if __name__ == "__main__":
    unittest.main()
