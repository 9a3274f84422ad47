import numpy as np
import pytest

from camspoof.pixels import (
    SIGN_THRESHOLD,
    DimensionError,
    EmptyResultError,
    PixelBuffer,
    RgbImage,
    SceneConfig,
    SignLabel,
    demosaic,
    make_template,
    mosaic,
    ncc_surface,
    paste,
    read_pxb,
    reinterpret_width,
    scene_rgb,
    synth_frame,
    toy_sign_detect,
    write_pxb,
)


def test_pixel_buffer_rejects_odd_and_mismatched():
    with pytest.raises(DimensionError):
        PixelBuffer(3, 2, bytes(6))
    with pytest.raises(DimensionError):
        PixelBuffer(4, 2, bytes(7))
    with pytest.raises(DimensionError):
        PixelBuffer(0, 2, b"")


def test_pxb_file_round_trip(tmp_path):
    buf = PixelBuffer(4, 2, bytes(range(8)))
    write_pxb(tmp_path / "f.pxb", buf)
    assert read_pxb(tmp_path / "f.pxb") == buf


def test_mosaic_samples_rggb():
    rgb = np.zeros((2, 2, 3), dtype=np.uint8)
    rgb[..., 0], rgb[..., 1], rgb[..., 2] = 10, 20, 30
    assert mosaic(rgb).array().tolist() == [[10, 20], [20, 30]]


def test_demosaic_single_red_impulse():
    raw = np.zeros((4, 4), dtype=np.uint8)
    raw[0, 0] = 255
    img = demosaic(PixelBuffer.from_array(raw)).pixels
    # bilinear weights: 1/4 at the diagonal B site, 1/2 at the adjacent G sites
    assert img[0, 0, 0] == 255
    assert img[1, 1, 0] == round(255 / 4)
    assert img[0, 1, 0] == 128 and img[1, 0, 0] == 128
    assert img[..., 1].max() == 0 and img[..., 2].max() == 0


def test_demosaic_flat_field_is_exact():
    rgb = np.zeros((6, 8, 3), dtype=np.uint8)
    rgb[...] = (200, 100, 50)
    assert np.array_equal(demosaic(mosaic(rgb)).pixels, rgb)


def test_mosaic_of_demosaic_is_identity():
    raw = np.random.default_rng(0).integers(0, 256, (16, 20), dtype=np.uint8)
    buf = PixelBuffer.from_array(raw)
    assert mosaic(demosaic(buf)) == buf


def test_reinterpret_width_same_width_is_identity():
    data = bytes(range(48))
    assert reinterpret_width(data, 8, 8).data == data


def test_reinterpret_width_drops_partial_and_odd_rows():
    out = reinterpret_width(bytes(40), 4, 6)
    # 40 bytes hold six full 6-pixel rows; the mosaic keeps an even height
    assert (out.width, out.height) == (6, 6)
    out = reinterpret_width(bytes(40), 4, 8)
    assert out.height == 4
    with pytest.raises(EmptyResultError):
        reinterpret_width(bytes(8), 4, 6)
    with pytest.raises(DimensionError):
        reinterpret_width(bytes(10), 4, 6)


@pytest.mark.parametrize("delta", [2, -2, 4])
def test_reinterpret_width_skews_by_width_difference(delta):
    # a vertical line at column 20 of a stripe laid out at w_inj
    w_inj = 64
    rows = np.zeros((24, w_inj), dtype=np.uint8)
    rows[:, 20] = 255
    view = reinterpret_width(rows.tobytes(), w_inj, w_inj - delta).array()
    cols = [int(np.argmax(r)) for r in view[:8]]
    # each received row starts delta bytes earlier in the source, so the line
    # drifts right by delta per row when injected wider than received
    assert np.diff(cols).tolist() == [delta] * 7


def test_scene_is_deterministic_and_moves():
    sc = SceneConfig(seed=5, width=64, height=48, motion=(2, 1))
    a = scene_rgb(sc, 3)
    assert np.array_equal(a, scene_rgb(sc, 3))
    b = scene_rgb(sc, 4)
    assert np.array_equal(b[1:, 2:], a[:-1, :-2])


def test_synth_frame_narrow_width_crops_right():
    sc = SceneConfig(seed=5, width=64, height=48)
    full = synth_frame(sc, 2).array()
    narrow = synth_frame(sc, 2, 60).array()
    assert narrow.shape == (48, 60)
    assert np.array_equal(narrow, full[:, :60])


def test_templates_have_even_shapes():
    assert make_template("StopSign").pixels.shape == (36, 36, 3)
    assert make_template(SignLabel.RedLight).pixels.shape == (52, 28, 3)
    assert make_template("StopSign", scale=2).pixels.shape == (72, 72, 3)


def test_ncc_of_template_with_itself_is_one():
    tpl = make_template("StopSign")
    assert ncc_surface(tpl.pixels, tpl)[0, 0] == pytest.approx(1.0)


def test_ncc_invariant_to_channel_offset():
    tpl = make_template("RedLight")
    shifted = np.clip(tpl.pixels.astype(int) * 0.5 + 40, 0, 255).astype(np.uint8)
    assert ncc_surface(shifted, tpl)[0, 0] > 0.98


def test_ncc_flat_window_scores_zero():
    tpl = make_template("StopSign")
    flat = np.full((50, 50, 3), 90, dtype=np.uint8)
    assert np.all(ncc_surface(flat, tpl) == 0)


@pytest.mark.parametrize("label", list(SignLabel))
def test_toy_detector_recognizes_pasted_sign(label):
    tpl = make_template(label)
    bg = scene_rgb(SceneConfig(seed=9, width=160, height=120), 0)
    img = demosaic(mosaic(paste(bg, tpl, 20, 40)))
    assert toy_sign_detect(img, tpl) > 0.7
    assert toy_sign_detect(demosaic(mosaic(bg)), tpl) < SIGN_THRESHOLD


def test_toy_detector_rows_restricts_search():
    tpl = make_template("StopSign")
    bg = scene_rgb(SceneConfig(seed=9, width=160, height=120), 0)
    img = demosaic(mosaic(paste(bg, tpl, 70, 40)))
    assert toy_sign_detect(img, tpl, rows=(60, 80)) > 0.7
    assert toy_sign_detect(img, tpl, rows=(0, 20)) < SIGN_THRESHOLD


def test_paste_rejects_out_of_bounds():
    with pytest.raises(DimensionError):
        paste(np.zeros((20, 20, 3), np.uint8), make_template("StopSign"), 0, 0)


def test_rgb_image_is_read_only():
    img = RgbImage(np.zeros((2, 2, 3), np.uint8))
    with pytest.raises(ValueError):
        img.pixels[0, 0, 0] = 1
