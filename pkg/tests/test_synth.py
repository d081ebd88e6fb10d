import hashlib

import numpy as np
import pytest

from emigrade.metrics import psnr
from emigrade.synth import (
    FULL,
    LEVELS,
    STUDIO,
    DatasetManifest,
    Frame,
    FrameFormatError,
    ManifestEntry,
    NoiseParams,
    build_dataset,
    decode_frame,
    encode_frame,
    export_image,
    frame_rng,
    frame_to_rgb,
    inject_noise,
    read_frame,
    render_colour_bars,
    rgb_to_ycbcr,
    split_counts,
)


@pytest.fixture(scope="module")
def bars():
    return render_colour_bars()


def test_bt601_studio_reference_colours():
    assert rgb_to_ycbcr((0, 0, 0)) == (16, 128, 128)
    assert rgb_to_ycbcr((1, 1, 1)) == (235, 128, 128)
    assert rgb_to_ycbcr((0, 0, 1)) == (41, 240, 110)
    # 16 + 219 * 0.114 = 40.966; 128 + 224 * (-0.0813...) = 109.79
    assert rgb_to_ycbcr((1, 0, 0)) == (81, 90, 240)
    assert rgb_to_ycbcr((0, 0, 0), FULL) == (0, 128, 128)


def test_bars_layout(bars):
    assert (bars.width, bars.height) == (1280, 720)
    for i in range(8):
        block = bars.stack()[:, :, i * 160:(i + 1) * 160]
        assert (block == block[:, :1, :1]).all()
    assert tuple(int(p[0, -1]) for p in bars.planes) == (16, 128, 128)
    assert tuple(int(p[0, 0]) for p in bars.planes) == rgb_to_ycbcr((0.75, 0.75, 0.75))
    assert int(bars.y[0, 0]) == 180


def test_bars_remainder_goes_to_last_bar():
    f = render_colour_bars(83, 4)
    assert (f.y[:, 70:] == 16).all()
    assert f.y[0, 69] != 16


def test_bars_deterministic_and_validated():
    assert render_colour_bars(64, 8) == render_colour_bars(64, 8)
    with pytest.raises(ValueError):
        render_colour_bars(0, 10)


def test_level5_is_flat_blue(bars):
    out = inject_noise(bars, 5, NoiseParams(), frame_rng(0, 5, "test", 0))
    assert (out.y == 41).all() and (out.cb == 240).all() and (out.cr == 110).all()
    assert all(p.var() == 0 for p in out.planes)


def test_zero_interference_is_identity(bars):
    params = NoiseParams(amplitude_ranges={1: (0, 0), 2: (0, 0), 3: (16, 40), 4: (48, 120)},
                         burst_probability={2: 0.0}, dither_sigma=0.0)
    assert inject_noise(bars, 2, params, np.random.default_rng(0)) == bars
    assert inject_noise(bars, 1, params, np.random.default_rng(0)) == bars


def test_level1_dither_is_small_but_not_bit_exact(bars):
    out = inject_noise(bars, 1, NoiseParams(), np.random.default_rng(0))
    diff = out.stack().astype(int) - bars.stack()
    assert diff.any()
    assert np.abs(diff).max() <= 4


def test_noise_applies_equally_to_all_planes():
    flat = Frame.from_stack(np.full((3, 16, 64), 128, np.uint8))
    out = inject_noise(flat, 3, NoiseParams(), np.random.default_rng(4))
    assert np.array_equal(out.y, out.cb) and np.array_equal(out.y, out.cr)


def test_level4_worse_than_level2(bars):
    p = NoiseParams()
    l2 = inject_noise(bars, 2, p, frame_rng(9, 2, "train", 0))
    l4 = inject_noise(bars, 4, p, frame_rng(9, 2, "train", 0))
    assert psnr(bars, l4).value_db < psnr(bars, l2).value_db


def test_monotone_mean_psnr(bars):
    p = NoiseParams(seed=1)
    means = []
    for level in (1, 2, 3, 4):
        vals = [psnr(bars, inject_noise(bars, level, p, frame_rng(1, level, "train", i))).value_db
                for i in range(50)]
        means.append(np.mean(vals))
    assert means == sorted(means, reverse=True) and len(set(means)) == 4


def test_noise_reproducible(bars):
    p = NoiseParams(seed=3)
    a = inject_noise(bars, 3, p, frame_rng(3, 3, "val", 7))
    b = inject_noise(bars, 3, p, frame_rng(3, 3, "val", 7))
    c = inject_noise(bars, 3, p, frame_rng(3, 3, "val", 8))
    assert a == b and a != c


def test_flip_preserves_plane_histograms(bars):
    out = inject_noise(bars, 4, NoiseParams(), np.random.default_rng(2))
    for plane in out.planes:
        h = np.bincount(plane.ravel(), minlength=256)
        assert np.array_equal(h, np.bincount(plane[:, ::-1].ravel(), minlength=256))
        assert np.array_equal(h, np.bincount(plane[::-1, :].ravel(), minlength=256))


def test_invalid_level(bars):
    for bad in (0, 6):
        with pytest.raises(ValueError):
            inject_noise(bars, bad, NoiseParams(), np.random.default_rng(0))


def test_noise_params_reject_overlapping_ranges():
    with pytest.raises(ValueError):
        NoiseParams(amplitude_ranges={2: (4, 20), 3: (16, 40), 4: (48, 120)})


def test_emif_roundtrip_and_layout():
    f = inject_noise(render_colour_bars(40, 6, FULL), 3, NoiseParams(), np.random.default_rng(1))
    data = encode_frame(f)
    assert len(data) == 14 + 3 * 40 * 6
    assert data[:4] == b"EMIF" and data[4] == 1
    assert int.from_bytes(data[5:9], "little") == 40 and int.from_bytes(data[9:13], "little") == 6
    assert data[13] == 1
    assert data[14:14 + 40] == f.y[0].tobytes()
    assert decode_frame(data) == f


@pytest.mark.parametrize("mutate", [
    lambda d: b"EMIX" + d[4:],
    lambda d: d[:4] + b"\x02" + d[5:],
    lambda d: d[:-1],
    lambda d: d[:10],
    lambda d: d[:13] + b"\x07" + d[14:],
])
def test_emif_rejects_malformed(mutate):
    data = encode_frame(render_colour_bars(16, 2))
    with pytest.raises(FrameFormatError):
        decode_frame(mutate(data))


def test_rgb_composite_roundtrip(bars):
    rgb = frame_to_rgb(bars)
    assert rgb.shape == (720, 1280, 3)
    assert tuple(rgb[0, 0]) == pytest.approx((191, 191, 191), abs=1)
    assert tuple(rgb[0, -1]) == (0, 0, 0)


def test_export_png(tmp_path, bars):
    from PIL import Image

    export_image(bars, tmp_path / "rgb.png")
    export_image(bars, tmp_path / "y.png", plane="y")
    assert Image.open(tmp_path / "rgb.png").size == (1280, 720)
    assert np.array_equal(np.asarray(Image.open(tmp_path / "y.png")), bars.y)


def test_split_counts():
    assert split_counts(1.0) == {"train": 800, "val": 200, "test": 100}
    assert split_counts(0.1) == {"train": 80, "val": 20, "test": 10}
    with pytest.raises(ValueError):
        split_counts(0.004)
    with pytest.raises(ValueError):
        split_counts(1.5)


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_build_dataset_small(tmp_path):
    m = build_dataset(tmp_path / "a", NoiseParams(seed=5), 0.01, width=64, height=16)
    assert len(m.entries) == 55
    assert all(m.counts()[lv, "train"] == 8 and m.counts()[lv, "test"] == 1 for lv in LEVELS)
    back = DatasetManifest.read(tmp_path / "a" / "manifest.tsv")
    assert back.entries == m.entries
    first = back.entries[0]
    assert read_frame(back.resolve(first)).width == 64
    assert read_frame(tmp_path / "a" / "reference.emif") == render_colour_bars(64, 16)
    build_dataset(tmp_path / "b", NoiseParams(seed=5), 0.01, width=64, height=16)
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    build_dataset(tmp_path / "c", NoiseParams(seed=6), 0.01, width=64, height=16)
    assert _digest(tmp_path / "a") != _digest(tmp_path / "c")


def test_manifest_format(tmp_path):
    m = DatasetManifest([ManifestEntry("x/a.emif", 3, "val")], tmp_path, ["hello"])
    m.write(tmp_path / "m.tsv")
    assert (tmp_path / "m.tsv").read_text() == "# hello\nx/a.emif\t3\tval\n"
    (tmp_path / "bad.tsv").write_text("a.emif\t6\ttrain\n")
    with pytest.raises(ValueError):
        DatasetManifest.read(tmp_path / "bad.tsv")


def test_studio_samples_stay_in_byte_range(bars):
    out = inject_noise(bars, 4, NoiseParams(amplitude_ranges={2: (4, 12), 3: (16, 40), 4: (119, 120)},
                                            burst_probability={4: 1.0}), np.random.default_rng(0))
    assert out.y.max() == 255 or out.y.min() == 0
    assert out.range_tag == STUDIO
