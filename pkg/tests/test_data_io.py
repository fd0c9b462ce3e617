import numpy as np
import pytest

from dynisp.data import DatasetManifest, DatasetRecord, ingest, validation_split
from dynisp.imgio import read_image, write_image


class TestImageRoundtrips:
    @pytest.mark.parametrize("ext", ["png", "ppm", "pam"])
    def test_8bit_rgb_roundtrip(self, rng, tmp_path, ext):
        img = rng.uniform(0, 1, (12, 10, 3)).astype(np.float32)
        path = str(tmp_path / f"img.{ext}")
        write_image(path, img, bit_depth=8)
        back = read_image(path)
        assert back.shape == img.shape
        # 8-bit requantization loses at most half a code of 1/255
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-7

    @pytest.mark.parametrize("ext", ["png", "pam"])
    def test_16bit_rgb_roundtrip(self, rng, tmp_path, ext):
        img = rng.uniform(0, 1, (8, 9, 3)).astype(np.float32)
        path = str(tmp_path / f"img.{ext}")
        write_image(path, img, bit_depth=16)
        back = read_image(path)
        assert np.abs(back - img).max() <= 0.5 / 65535 + 1e-7

    def test_16bit_gray_pam_roundtrip(self, rng, tmp_path):
        img = rng.uniform(0, 1, (6, 8)).astype(np.float32)
        path = str(tmp_path / "mosaic.pam")
        write_image(path, img, bit_depth=16)
        back = read_image(path)
        assert back.shape == (6, 8)
        assert np.abs(back - img).max() <= 0.5 / 65535 + 1e-7

    def test_out_of_range_values_clipped_on_write(self, tmp_path):
        img = np.array([[-0.5, 1.5]], dtype=np.float32)
        path = str(tmp_path / "clip.pam")
        write_image(path, img, bit_depth=8)
        back = read_image(path)
        assert back[0, 0] == 0.0 and back[0, 1] == 1.0

    def test_bad_bit_depth_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_image(str(tmp_path / "x.png"), np.zeros((4, 4)), bit_depth=12)

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_image(str(tmp_path / "nope.png"))


class TestPamParser:
    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.pam"
        p.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(ValueError, match="P7"):
            read_image(str(p))

    def test_truncated_header_rejected(self, tmp_path):
        p = tmp_path / "bad.pam"
        p.write_bytes(b"P7\nWIDTH 4\n")
        with pytest.raises(ValueError, match="truncated"):
            read_image(str(p))

    def test_missing_field_rejected(self, tmp_path):
        p = tmp_path / "bad.pam"
        p.write_bytes(b"P7\nWIDTH 1\nHEIGHT 1\nMAXVAL 255\nENDHDR\n\x00")
        with pytest.raises(ValueError, match="DEPTH"):
            read_image(str(p))

    def test_payload_size_mismatch_rejected(self, tmp_path):
        p = tmp_path / "bad.pam"
        p.write_bytes(b"P7\nWIDTH 2\nHEIGHT 2\nDEPTH 1\nMAXVAL 255\nENDHDR\n\x00\x00")
        with pytest.raises(ValueError, match="size mismatch"):
            read_image(str(p))

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "ok.pam"
        p.write_bytes(
            b"P7\n# a comment\n\nWIDTH 1\nHEIGHT 1\nDEPTH 1\nMAXVAL 255\n"
            b"TUPLTYPE GRAYSCALE\nENDHDR\n\x80"
        )
        img = read_image(str(p))
        assert img.shape == (1, 1)
        assert img[0, 0] == pytest.approx(128 / 255)


def _write_rgb_dataset(tmp_path, rng, n=4, size=16):
    lines = ["task=enhancement", "input_mode=rgb"]
    for i in range(n):
        x = rng.uniform(0, 1, (size, size, 3)).astype(np.float32)
        y = np.clip(x * 0.8, 0, 1)
        write_image(str(tmp_path / f"in_{i}.png"), x)
        write_image(str(tmp_path / f"gt_{i}.png"), y)
        lines.append(f"in_{i}.png,gt_{i}.png,sensorA")
    mpath = tmp_path / "manifest.txt"
    mpath.write_text("\n".join(lines) + "\n")
    return str(mpath)


class TestManifest:
    def test_load_and_fields(self, rng, tmp_path):
        m = DatasetManifest.load(_write_rgb_dataset(tmp_path, rng))
        assert m.task == "enhancement"
        assert m.input_mode == "rgb"
        assert len(m.records) == 4
        assert m.records[0].sensor_tag == "sensorA"
        assert m.records[0].image_id == "in_0"

    def test_missing_task_rejected(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("a.png,b.png\n")
        with pytest.raises(ValueError, match="task"):
            DatasetManifest.load(str(p))

    def test_unknown_task_rejected(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("task=sharpening\na.png,b.png\n")
        with pytest.raises(ValueError):
            DatasetManifest.load(str(p))

    def test_bad_record_rejected(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("task=enhancement\na.png,b.png,c,d\n")
        with pytest.raises(ValueError, match="line 2"):
            DatasetManifest.load(str(p))

    def test_validation_split_tail(self, rng, tmp_path):
        m = DatasetManifest.load(_write_rgb_dataset(tmp_path, rng, n=10))
        tr, va = validation_split(m, fraction=0.2)
        assert len(tr.records) == 8 and len(va.records) == 2
        assert [r.image_id for r in va.records] == ["in_8", "in_9"]
        assert va.task == m.task and va.input_mode == m.input_mode


class TestIngest:
    def test_yields_chw_pairs(self, rng, tmp_path):
        m = DatasetManifest.load(_write_rgb_dataset(tmp_path, rng))
        items = list(ingest(m))
        assert len(items) == 4
        for image_id, x, y in items:
            assert x.shape == (3, 16, 16) and y.shape == (3, 16, 16)
            assert x.dtype == np.float32

    def test_augmentation_stays_paired(self, rng, tmp_path):
        # input == gt, so any paired spatial transform keeps them equal
        lines = ["task=enhancement"]
        img = rng.uniform(0, 1, (16, 16, 3)).astype(np.float32)
        write_image(str(tmp_path / "same.png"), img)
        lines.append("same.png,same.png")
        mpath = tmp_path / "m.txt"
        mpath.write_text("\n".join(lines) + "\n")
        m = DatasetManifest.load(str(mpath))
        for seed in range(8):
            _, x, y = next(iter(ingest(m, augment=True, crop=8, seed=seed)))
            assert x.shape == (3, 8, 8)
            assert np.array_equal(x, y)

    def test_augmentation_deterministic_per_seed(self, rng, tmp_path):
        m = DatasetManifest.load(_write_rgb_dataset(tmp_path, rng))
        a = [x for _, x, _ in ingest(m, augment=True, crop=8, seed=3)]
        b = [x for _, x, _ in ingest(m, augment=True, crop=8, seed=3)]
        assert all(np.array_equal(p, q) for p, q in zip(a, b))

    def test_bayer_packing_and_no_augmentation(self, rng, tmp_path):
        mosaic = rng.uniform(0, 1, (8, 8)).astype(np.float32)
        gt = rng.uniform(0, 1, (8, 8, 3)).astype(np.float32)
        write_image(str(tmp_path / "m.pam"), mosaic, bit_depth=16)
        write_image(str(tmp_path / "gt.png"), gt, bit_depth=16)
        (tmp_path / "man.txt").write_text(
            "task=universal_isp\ninput_mode=bayer4\nm.pam,gt.png\n"
        )
        m = DatasetManifest.load(str(tmp_path / "man.txt"))
        for seed in range(3):
            _, x, y = next(iter(ingest(m, augment=True, seed=seed)))
            assert x.shape == (4, 4, 4)  # packed RGGB at half resolution
            assert y.shape == (3, 8, 8)
            # augmentation is disabled: the packed mosaic never changes
            assert np.abs(x[0] - mosaic[0::2, 0::2]).max() <= 0.5 / 65535 + 1e-7

    def test_bayer_requires_single_channel_input(self, rng, tmp_path):
        bad = rng.uniform(0, 1, (8, 8, 3)).astype(np.float32)
        gt = rng.uniform(0, 1, (16, 16, 3)).astype(np.float32)
        write_image(str(tmp_path / "bad.png"), bad)
        write_image(str(tmp_path / "gt.png"), gt)
        (tmp_path / "man.txt").write_text(
            "task=universal_isp\ninput_mode=bayer4\nbad.png,gt.png\n"
        )
        m = DatasetManifest.load(str(tmp_path / "man.txt"))
        with pytest.raises(ValueError, match="single-channel"):
            list(ingest(m))

    def test_dim_mismatch_rejected(self, rng, tmp_path):
        a = rng.uniform(0, 1, (8, 8, 3)).astype(np.float32)
        b = rng.uniform(0, 1, (6, 8, 3)).astype(np.float32)
        write_image(str(tmp_path / "a.png"), a)
        write_image(str(tmp_path / "b.png"), b)
        (tmp_path / "man.txt").write_text("task=enhancement\na.png,b.png\n")
        m = DatasetManifest.load(str(tmp_path / "man.txt"))
        with pytest.raises(ValueError, match="mismatch"):
            list(ingest(m))
