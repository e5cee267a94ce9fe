"""File formats: images, label maps, score maps, parameter bundles and manifests."""

import struct

import numpy as np
import pytest
from PIL import Image

from guidedcrf import guided_filter as gf
from guidedcrf import io
from guidedcrf.training import make_synthetic_dataset


class TestImages:
    def test_white_ppm(self, tmp_path):
        p = tmp_path / "w.ppm"
        p.write_bytes(b"P6\n1 1\n255\n\xff\xff\xff")
        np.testing.assert_array_equal(io.load_image(p), np.ones((1, 1, 3)))

    def test_black_png(self, tmp_path):
        p = tmp_path / "b.png"
        Image.fromarray(np.zeros((1, 1, 3), np.uint8)).save(p)
        np.testing.assert_array_equal(io.load_image(p), np.zeros((1, 1, 3)))

    def test_gray_replicated(self, tmp_path):
        p = tmp_path / "g.pgm"
        p.write_bytes(b"P5 2 1 255\n\x00\x80")
        img = io.load_image(p)
        assert img.shape == (1, 2, 3)
        np.testing.assert_array_equal(img[0, 1], [128 / 255] * 3)

    def test_header_comment(self, tmp_path):
        p = tmp_path / "c.ppm"
        p.write_bytes(b"P6\n# note\n1 1\n255\n\x00\x10\x20")
        np.testing.assert_array_equal(io.load_image(p)[0, 0] * 255, [0, 16, 32])

    @pytest.mark.parametrize("suffix", [".png", ".ppm"])
    def test_round_trip_bitwise(self, tmp_path, rng, suffix):
        a, b = tmp_path / f"a{suffix}", tmp_path / f"b{suffix}"
        io.save_image(a, rng.random((5, 7, 3)))
        io.save_image(b, io.load_image(a))
        assert a.read_bytes() == b.read_bytes()

    def test_bad_header_reports_offset(self, tmp_path):
        p = tmp_path / "bad.ppm"
        p.write_bytes(b"P6\n1 x\n255\n\x00\x00\x00")
        with pytest.raises(io.ImageFormatError, match="byte offset 5"):
            io.load_image(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "t.ppm"
        p.write_bytes(b"P6\n2 2\n255\n\x00\x00\x00")
        with pytest.raises(io.TruncatedPayload, match="offset 11"):
            io.load_image(p)

    def test_unrecognised(self, tmp_path):
        p = tmp_path / "x.ppm"
        p.write_bytes(b"GIF89a..")
        with pytest.raises(io.ImageFormatError):
            io.load_image(p)

    def test_sixteen_bit_rejected(self, tmp_path):
        p = tmp_path / "d.pgm"
        p.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(io.ImageFormatError, match="8-bit"):
            io.load_image(p)

    def test_unsupported_extension(self, tmp_path):
        with pytest.raises(ValueError):
            io.save_image(tmp_path / "a.jpg", np.zeros((1, 1, 3)))


class TestLabels:
    def test_round_trip(self, tmp_path, rng):
        lab = rng.integers(0, 4, (6, 5)).astype(np.uint8)
        lab[0, 0] = 255
        io.save_labels(tmp_path / "l.pgm", lab)
        np.testing.assert_array_equal(io.load_labels(tmp_path / "l.pgm"), lab)

    def test_colour_rejected(self, tmp_path):
        io.save_image(tmp_path / "c.ppm", np.zeros((2, 2, 3)))
        with pytest.raises(io.ImageFormatError):
            io.load_labels(tmp_path / "c.ppm")


class TestScoreMaps:
    def test_ramp_round_trip(self, tmp_path):
        ramp = np.arange(18, dtype=np.float64).reshape(3, 3, 2) / 4
        io.save_score_map(tmp_path / "s.scm", ramp)
        data = (tmp_path / "s.scm").read_bytes()
        assert data[:4] == b"SCM1" and struct.unpack_from("<3I", data, 4) == (3, 3, 2)
        assert len(data) == 16 + 18 * 4
        np.testing.assert_array_equal(io.load_score_map(tmp_path / "s.scm"), ramp)

    def test_stored_as_f32(self, tmp_path):
        io.save_score_map(tmp_path / "s.scm", np.full((1, 1, 1), 0.1))
        assert io.load_score_map(tmp_path / "s.scm")[0, 0, 0] == float(np.float32(0.1))

    def test_magic_mismatch(self, tmp_path):
        (tmp_path / "s.scm").write_bytes(b"XXXX" + bytes(12))
        with pytest.raises(io.MagicMismatch):
            io.load_score_map(tmp_path / "s.scm")

    def test_truncated(self, tmp_path):
        io.save_score_map(tmp_path / "s.scm", np.zeros((3, 3, 2)))
        data = (tmp_path / "s.scm").read_bytes()
        (tmp_path / "s.scm").write_bytes(data[:-4])
        with pytest.raises(io.TruncatedPayload):
            io.load_score_map(tmp_path / "s.scm")

    def test_trailing_bytes(self, tmp_path):
        io.save_score_map(tmp_path / "s.scm", np.zeros((1, 1, 1)))
        with open(tmp_path / "s.scm", "ab") as fh:
            fh.write(b"\x00")
        with pytest.raises(io.FormatError, match="trailing"):
            io.load_score_map(tmp_path / "s.scm")


class TestBundles:
    def test_round_trip(self, tmp_path, rng):
        params = {"guidance.mu": rng.normal(size=(3, 3)), "guidance.lambda": np.array(0.75),
                  "context.net.b2": rng.normal(size=3)}
        io.save_bundle(tmp_path / "p.prm", params)
        back = io.load_bundle(tmp_path / "p.prm")
        assert set(back) == set(params)
        for k, v in params.items():
            np.testing.assert_array_equal(back[k], np.asarray(v, np.float32))
            assert back[k].shape == np.shape(v)

    def test_empty_bundle(self, tmp_path):
        io.save_bundle(tmp_path / "e.prm", {})
        assert io.load_bundle(tmp_path / "e.prm") == {}

    def test_unknown_name_on_save(self, tmp_path):
        with pytest.raises(io.UnknownComponent):
            io.save_bundle(tmp_path / "p.prm", {"backbone.w": np.zeros(2)})

    def test_unknown_name_on_load(self, tmp_path):
        raw = b"other.w"
        data = (b"PRM1" + struct.pack("<2I", 1, 1) + struct.pack("<H", len(raw)) + raw
                + struct.pack("<2I", 1, 1) + np.zeros(1, "<f4").tobytes())
        (tmp_path / "p.prm").write_bytes(data)
        with pytest.raises(io.UnknownComponent, match="other.w"):
            io.load_bundle(tmp_path / "p.prm")

    def test_shape_mismatch(self, tmp_path):
        io.save_bundle(tmp_path / "p.prm", {"guidance.mu": np.zeros((3, 3))})
        with pytest.raises(io.ShapeMismatch, match="shape mismatch"):
            io.load_bundle(tmp_path / "p.prm", {"guidance.mu": (4, 4)})

    def test_unexpected_component(self, tmp_path):
        io.save_bundle(tmp_path / "p.prm", {"guidance.mu": np.zeros((3, 3))})
        with pytest.raises(io.UnknownComponent):
            io.load_bundle(tmp_path / "p.prm", {"context.mu_g": (3, 3, 2)})

    def test_magic_and_truncation(self, tmp_path):
        io.save_bundle(tmp_path / "p.prm", {"guidance.mu": np.zeros((3, 3))})
        data = (tmp_path / "p.prm").read_bytes()
        (tmp_path / "t.prm").write_bytes(data[:-1])
        with pytest.raises(io.TruncatedPayload):
            io.load_bundle(tmp_path / "t.prm")
        (tmp_path / "m.prm").write_bytes(b"NOPE" + data[4:])
        with pytest.raises(io.MagicMismatch):
            io.load_bundle(tmp_path / "m.prm")

    def test_non_finite_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            io.save_bundle(tmp_path / "p.prm", {"guidance.lambda": np.array(np.nan)})

    def test_filter_entry(self):
        cfg = gf.GuidedFilterConfig(radius=4, epsilon=0.01, subsample=2)
        assert io.filter_config_from_entry(np.float32(io.filter_config_entry(cfg))) == cfg


class TestManifests:
    def test_empty_manifest(self, tmp_path):
        (tmp_path / "m.txt").write_text("# nothing here\n\n")
        assert io.load_manifest(tmp_path / "m.txt") == []
        assert io.load_dataset(tmp_path / "m.txt") == []

    def test_bad_line(self, tmp_path):
        (tmp_path / "m.txt").write_text("a.ppm b.pgm\n")
        with pytest.raises(io.FormatError, match=":1:"):
            io.load_manifest(tmp_path / "m.txt")

    def test_dataset_round_trip(self, tmp_path):
        samples = make_synthetic_dataset(2, h=32, w=40, seed=0)
        manifest = io.write_dataset(tmp_path / "ds", samples)
        back = io.load_dataset(manifest)
        assert len(back) == 2
        for s, b in zip(samples, back):
            np.testing.assert_array_equal(b.labels, s.labels)
            np.testing.assert_allclose(b.image, s.image, atol=0.5 / 255 + 1e-12)
            np.testing.assert_allclose(b.unary, s.unary, rtol=1e-6)

    def test_label_dims_checked(self, tmp_path):
        io.save_image(tmp_path / "i.ppm", np.zeros((4, 4, 3)))
        io.save_labels(tmp_path / "l.pgm", np.zeros((3, 4), np.uint8))
        io.save_score_map(tmp_path / "u.scm", np.zeros((4, 4, 2)))
        (tmp_path / "m.txt").write_text("i.ppm\tl.pgm\tu.scm\n")
        with pytest.raises(io.ShapeMismatch):
            io.load_dataset(tmp_path / "m.txt")
