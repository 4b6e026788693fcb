from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ife import tensor as T
from ife.geometry import (
    ConvStackSpec,
    GeometryError,
    audit_report,
    displacement_1d,
    displacement,
    geometric_displacement,
    naive_upsample_map,
    overlap_count_map,
    overlap_counts_1d,
    receptive_field,
)


def single(kernel, stride, width, height=None):
    return ConvStackSpec(((kernel, stride),), width, height or width)


# -- displacement ---------------------------------------------------------------


@pytest.mark.parametrize("k", [1, 2, 4, 7])
def test_non_overlap_zero_displacement(k):
    spec = single(k, k, 8 * k)
    fw, _ = spec.feature_size()
    for m in range(fw):
        for l in range(k):
            r = displacement(spec, m, m, l, l)
            assert r.d_x == 0.0 and r.d_y == 0.0


def test_displacement_examples():
    spec = single(8, 4, 84)
    assert displacement(spec, 10, 0, 0, 0).d_x == pytest.approx(-2.0, abs=1e-12)
    assert displacement(spec, 0, 0, 7, 0).d_x == pytest.approx(3.325, abs=1e-12)
    # same values from the exact geometric route
    assert geometric_displacement(8, 4, 84, 10, 0) == Fraction(-2)
    assert geometric_displacement(8, 4, 84, 0, 7) == Fraction(133, 40)


def test_displacement_uses_height_for_y():
    spec = ConvStackSpec(((8, 4),), 84, 44)
    r = displacement(spec, 3, 3, 2, 2)
    assert r.d_x == pytest.approx(displacement_1d(3, 2, 8, 4, 84))
    assert r.d_y == pytest.approx(displacement_1d(3, 2, 8, 4, 44))
    assert r.d_x != r.d_y


def test_displacement_errors():
    with pytest.raises(GeometryError, match="degenerate divisor"):
        displacement_1d(0, 0, 10, 1, 5)
    with pytest.raises(GeometryError):
        displacement(single(8, 4, 84), 20, 0, 0, 0)
    with pytest.raises(GeometryError):
        displacement(single(8, 4, 84), 0, 0, 8, 0)


def test_window_start_term_matches_rational_upsample_start():
    for width in range(16, 129, 7):
        for kernel in range(1, 9):
            for stride in range(1, kernel + 1):
                fw = Fraction(width - kernel, stride) + 1
                for m in range((width - kernel) // stride + 1):
                    start_term = displacement_1d(m, 0, kernel, stride, width)
                    assert abs(start_term - float(m * stride - m * Fraction(width) / fw)) < 1e-9


def test_zero_displacement_iff_non_overlapping():
    for kernel in range(1, 7):
        for stride in range(1, kernel + 1):
            for width in range(kernel + 1, 25):
                fw = (width - kernel) // stride + 1
                all_zero = all(
                    displacement_1d(m, l, kernel, stride, width) == 0.0 for m in range(fw) for l in range(kernel)
                )
                assert all_zero == (stride == kernel), (kernel, stride, width)


# -- receptive field ------------------------------------------------------------


def test_receptive_field_examples():
    rf = receptive_field(single(4, 4, 16), 2, 0)
    assert (rf.x_start, rf.x_end) == (8, 12)
    rf2 = receptive_field(ConvStackSpec(((2, 2), (2, 2)), 16, 16), 3, 1)
    assert (rf2.x_start, rf2.x_end) == (12, 16)
    assert (rf2.y_start, rf2.y_end) == (4, 8)
    with pytest.raises(GeometryError):
        receptive_field(single(4, 4, 16), 4, 0)


def test_receptive_field_single_layer_window():
    spec = single(8, 4, 84)
    for m in range(20):
        rf = receptive_field(spec, m, 19 - m)
        assert (rf.x_start, rf.x_end) == (4 * m, 4 * m + 8)
        assert rf.x_end - rf.x_start == spec.effective_layer()[0]
        assert 0 <= rf.x_start and rf.x_end <= 84 and rf.y_end <= 84


def _random_stack(rng):
    while True:
        width = int(rng.integers(8, 65))
        height = int(rng.integers(8, 65))
        layers = []
        w, h = width, height
        for _ in range(int(rng.integers(1, 4))):
            k = int(rng.integers(1, min(w, h, 6) + 1))
            s = int(rng.integers(1, k + 1))
            layers.append((k, s))
            w, h = (w - k) // s + 1, (h - k) // s + 1
        return ConvStackSpec(tuple(layers), width, height)


def _stack_forward(spec, weights, images):
    x = T.Tensor(images)
    for (k, s), w in zip(spec.layers, weights):
        x = T.conv2d(x, T.Tensor(w), T.Tensor([0.0]), stride=s)
    return x.data[:, 0]


def test_receptive_field_perturbation_oracle():
    """Changing a pixel moves exactly the features whose interval holds it."""
    rng = np.random.default_rng(123)
    for _ in range(100):
        spec = _random_stack(rng)
        weights = [rng.uniform(0.1, 1.0, (1, 1, k, k)) for k, _ in spec.layers]
        h, w = spec.input_height, spec.input_width
        base_img = rng.uniform(0.1, 1.0, (1, 1, h, w))
        base = _stack_forward(spec, weights, base_img)[0]
        fw, fh = spec.feature_size()
        inside = np.zeros((fh, fw, h, w), dtype=bool)
        for n in range(fh):
            for m in range(fw):
                rf = receptive_field(spec, m, n)
                inside[n, m, rf.y_start : rf.y_end, rf.x_start : rf.x_end] = True
        # perturb a random subset of pixels (all of them for small images);
        # one forward per image so every run takes the same numeric path
        pixels = [(y, x) for y in range(h) for x in range(w)]
        if len(pixels) > 200:
            pick = rng.choice(len(pixels), 200, replace=False)
            pixels = [pixels[i] for i in pick]
        for y, x in pixels:
            img = base_img.copy()
            img[0, 0, y, x] += 1.0
            changed = _stack_forward(spec, weights, img)[0] != base
            np.testing.assert_array_equal(changed, inside[:, :, y, x])


# -- upsampling and overlap -------------------------------------------------------


def test_naive_upsample_examples():
    for m in range(12):
        assert naive_upsample_map(12, 12, m) == (m, m + 1)
    assert naive_upsample_map(20, 84, 10) == (42, 46)
    with pytest.raises(GeometryError):
        naive_upsample_map(20, 84, 20)
    with pytest.raises(GeometryError):
        naive_upsample_map(90, 84, 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 200), st.integers(1, 200))
def test_naive_upsample_tiles(fw, extra):
    wi = fw + extra - 1
    blocks = [naive_upsample_map(fw, wi, m) for m in range(fw)]
    assert blocks[0][0] == 0 and blocks[-1][1] == wi
    assert all(a[1] == b[0] for a, b in zip(blocks, blocks[1:]))


def test_naive_upsample_round_half_up():
    # 3 features over 5 pixels: edges 0, 5/3 -> 2, 10/3 -> 3, 5
    assert [naive_upsample_map(3, 5, m) for m in range(3)] == [(0, 2), (2, 3), (3, 5)]
    # 4 features over 6 pixels: edge 1.5 rounds up to 2, edge 4.5 to 5
    assert [naive_upsample_map(4, 6, m) for m in range(4)] == [(0, 2), (2, 3), (3, 5), (5, 6)]


def _brute_overlap(kernel, stride, width):
    counts = [0] * width
    for start in range(0, width - kernel + 1, stride):
        for p in range(start, start + kernel):
            counts[p] += 1
    return counts


def test_overlap_counts_dqn_first_layer():
    counts = overlap_counts_1d(8, 4, 84)
    assert counts.tolist() == _brute_overlap(8, 4, 84)
    assert (counts[:4] == 1).all() and (counts[4:80] == 2).all() and (counts[80:] == 1).all()


def test_overlap_properties():
    for kernel in range(1, 9):
        for stride in range(1, kernel + 1):
            for width in (16, 32, 37, 84):
                spec = single(kernel, stride, width)
                counts = overlap_counts_1d(kernel, stride, width)
                assert counts.tolist() == _brute_overlap(kernel, stride, width)
                fw = spec.feature_size()[0]
                assert counts.sum() == fw * kernel
                assert counts.max() <= -(-kernel // stride)
                if stride == kernel:
                    assert set(counts.tolist()) <= {0, 1}
                full = overlap_count_map(spec)
                assert full.shape == (width, width)
                assert full.sum() == (fw * kernel) ** 2


# -- audit report ---------------------------------------------------------------


def test_audit_preserving_stack():
    report = audit_report(ConvStackSpec(((4, 4),), 40, 40))
    assert report["verdict"] == "preserving"
    assert report["max_dx"] == 0.0 and report["mean_dx"] == 0.0
    assert report["overlap_histogram"] == {"1": 1600}


def test_audit_dqn_stack():
    spec = ConvStackSpec(((8, 4), (4, 2), (3, 1)), 84, 84)
    report = audit_report(spec)
    assert report["verdict"] == "non-preserving"
    assert (report["effective_kernel"], report["effective_stride"]) == (36, 8)
    assert report["feature_grid"] == [7, 7]
    sweep = [abs(displacement_1d(m, l, 36, 8, 84)) for m in range(7) for l in range(36)]
    assert report["max_dx"] == pytest.approx(max(sweep)) and report["max_dx"] > 0
    assert report["mean_dx"] == pytest.approx(np.mean(sweep)) and report["mean_dx"] > 0
    assert report == audit_report(spec)


def test_parse_and_spec_validation():
    spec = ConvStackSpec.parse("8x4, 4x2,3x1", "84x84")
    assert spec.layers == ((8, 4), (4, 2), (3, 1))
    with pytest.raises(GeometryError):
        ConvStackSpec.parse("8by4", "84x84")
    with pytest.raises(GeometryError):
        ConvStackSpec(((9, 1),), 8, 8)
    with pytest.raises(GeometryError):
        ConvStackSpec(((2, 0),), 8, 8)
