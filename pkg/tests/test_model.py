import numpy as np
import pytest

from donnseg.errors import GridMismatchError
from donnseg.field import ComplexField2D, GridSpec, add_fields, add_intensities, intensity
from donnseg.model import (
    ChannelPipeline,
    DonnModel,
    PhaseMask,
    SkipSpec,
    diff_mod,
    forward_channel,
    forward_rgb,
    init_model,
)
from donnseg.propagation import make_fresnel_kernel, propagate

PITCH = 36e-6
WAVELENGTH = 532e-9
Z = 0.015  # alias-free at 32 px even for four-gap skip kernels


def grid(side=32):
    return GridSpec(side, PITCH, WAVELENGTH)


def random_field(g, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(g.side_px, g.side_px)) + 1j * rng.normal(size=(g.side_px, g.side_px))
    return ComplexField2D(g, v)


def zero_phase_channel(g, layers, skips=()):
    masks = [PhaseMask(g, np.zeros((g.side_px, g.side_px))) for _ in range(layers)]
    return ChannelPipeline(masks, tuple(SkipSpec(a, b) for a, b in skips), Z)


def random_channel(g, layers, seed, skips=()):
    rng = np.random.default_rng(seed)
    masks = [
        PhaseMask(g, rng.uniform(0, 2 * np.pi, size=(g.side_px, g.side_px)))
        for _ in range(layers)
    ]
    return ChannelPipeline(masks, tuple(SkipSpec(a, b) for a, b in skips), Z)


def random_model(g, layers, seed, skips=(), pad_factor=2):
    channels = [random_channel(g, layers, seed + c, skips) for c in range(3)]
    return DonnModel(grid=g, channels=channels, pad_factor=pad_factor, seed=seed)


class TestSkipSpec:
    def test_rejects_adjacent_layers(self):
        with pytest.raises(ValueError):
            SkipSpec(3, 4)

    def test_gap_count(self):
        assert SkipSpec(1, 5).gap_count == 4

    def test_duplicate_skips_rejected(self):
        g = grid(8)
        with pytest.raises(ValueError):
            zero_phase_channel(g, 8, skips=[(1, 5), (1, 5)])

    def test_out_of_range_target_rejected(self):
        with pytest.raises(ValueError):
            zero_phase_channel(grid(8), 4, skips=[(1, 6)])


class TestDiffMod:
    def test_zero_phase_is_plain_propagation(self):
        g = grid()
        f = random_field(g, 0)
        kern = make_fresnel_kernel(g, Z)
        mask = PhaseMask(g, np.zeros((32, 32)))
        assert np.array_equal(diff_mod(f, mask, kern).values, propagate(f, kern).values)

    def test_magnitude_unchanged_by_mask(self):
        g = grid()
        f = random_field(g, 1)
        kern = make_fresnel_kernel(g, Z)
        rng = np.random.default_rng(2)
        mask = PhaseMask(g, rng.uniform(0, 2 * np.pi, size=(32, 32)))
        assert np.allclose(
            np.abs(diff_mod(f, mask, kern).values),
            np.abs(propagate(f, kern).values),
            rtol=1e-13,
        )

    def test_pi_phase_flips_sign(self):
        g = grid()
        f = random_field(g, 3)
        kern = make_fresnel_kernel(g, Z)
        mask = PhaseMask(g, np.full((32, 32), np.pi))
        assert np.allclose(
            diff_mod(f, mask, kern).values, -propagate(f, kern).values, atol=1e-14
        )


class TestForwardChannel:
    def test_three_identity_layers_are_three_free_space_steps(self):
        g = grid()
        f0 = random_field(g, 4)
        ch = zero_phase_channel(g, 3)
        kern = make_fresnel_kernel(g, Z)
        expected = propagate(propagate(propagate(f0, kern), kern), kern)
        out = forward_channel(f0, ch)
        assert np.linalg.norm(out.values - expected.values) <= 1e-12 * np.linalg.norm(expected.values)

    def test_skip_semantics_match_manual_composition_zero_phase(self):
        # skip (1 -> 5) in a 7-layer stack: input to layer 5 is f4 + L(f1, 4z)
        g = grid()
        f0 = random_field(g, 5)
        ch = zero_phase_channel(g, 7, skips=[(1, 5)])
        kz = make_fresnel_kernel(g, Z)
        k4z = make_fresnel_kernel(g, 4 * Z)
        f1 = propagate(f0, kz)
        f2 = propagate(f1, kz)
        f3 = propagate(f2, kz)
        f4 = propagate(f3, kz)
        u5 = add_fields(f4, propagate(f1, k4z))
        f5 = propagate(u5, kz)
        f6 = propagate(f5, kz)
        f7 = propagate(f6, kz)
        out = forward_channel(f0, ch)
        assert np.linalg.norm(out.values - f7.values) <= 1e-12 * np.linalg.norm(f7.values)

    def test_skip_semantics_match_manual_composition_random_phase(self):
        g = grid()
        f0 = random_field(g, 6)
        ch = random_channel(g, 7, seed=9, skips=[(1, 5)])
        kz = make_fresnel_kernel(g, Z)
        k4z = make_fresnel_kernel(g, 4 * Z)
        f = f0
        outs = []
        for i in range(4):
            f = diff_mod(f, ch.masks[i], kz)
            outs.append(f)
        f = add_fields(f, propagate(outs[0], k4z))
        for i in range(4, 7):
            f = diff_mod(f, ch.masks[i], kz)
        out = forward_channel(f0, ch)
        assert np.linalg.norm(out.values - f.values) <= 1e-12 * np.linalg.norm(f.values)

    def test_lane_preset_runs_at_full_scale(self):
        model = init_model("lane-8", seed=0, z_m=Z)
        assert model.grid.side_px == 400
        g = model.channels[0].grid
        img = np.zeros((400, 400))
        img[180:220, 180:220] = 1.0
        f0 = ComplexField2D(g, img.astype(complex))
        out = forward_channel(f0, model.channels[0])
        assert np.isfinite(out.values.view(np.float64)).all()

    def test_linear_in_input_field(self):
        g = grid()
        ch = random_channel(g, 3, seed=11, skips=[(1, 3)])
        f = random_field(g, 12)
        alpha = 0.7 - 1.3j
        scaled = ComplexField2D(g, alpha * f.values)
        lhs = forward_channel(scaled, ch).values
        rhs = alpha * forward_channel(f, ch).values
        assert np.linalg.norm(lhs - rhs) < 1e-13 * np.linalg.norm(rhs)

    def test_grid_mismatch_rejected(self):
        ch = random_channel(grid(32), 2, seed=0)
        with pytest.raises(GridMismatchError):
            forward_channel(random_field(grid(16), 0), ch)


class TestForwardRgb:
    def test_zero_inputs_give_zero_detector(self):
        g = grid()
        model = random_model(g, 2, seed=0)
        zero = ComplexField2D(g, np.zeros((32, 32), complex))
        out = forward_rgb(zero, zero, zero, model)
        assert np.all(out.values == 0)

    def test_single_channel_when_others_zero(self):
        g = grid()
        model = random_model(g, 3, seed=1, skips=[(1, 3)])
        r = random_field(g, 2)
        zero = ComplexField2D(g, np.zeros((32, 32), complex))
        together = forward_rgb(r, zero, zero, model)
        alone = intensity(forward_channel(r, model.channels[0]))
        assert np.array_equal(together.values, alone.values)

    def test_detector_is_exact_sum_of_channel_intensities(self):
        g = grid()
        model = random_model(g, 3, seed=3, skips=[(1, 3)])
        fields = [random_field(g, 20 + c) for c in range(3)]
        total = forward_rgb(*fields, model)
        parts = [
            intensity(forward_channel(f, ch)) for f, ch in zip(fields, model.channels)
        ]
        assert np.array_equal(total.values, add_intensities(parts).values)

    def test_channel_independence_is_bitwise(self):
        g = grid()
        model = random_model(g, 3, seed=4)
        fields = [random_field(g, 30 + c) for c in range(3)]
        before = [
            intensity(forward_channel(f, ch)).values
            for f, ch in zip(fields, model.channels)
        ]
        # perturb only the R-channel masks
        for mask in model.channels[0].masks:
            mask.theta += 0.37
        after = [
            intensity(forward_channel(f, ch)).values
            for f, ch in zip(fields, model.channels)
        ]
        assert not np.array_equal(before[0], after[0])
        assert np.array_equal(before[1], after[1])
        assert np.array_equal(before[2], after[2])

    def test_global_phase_invariance(self):
        g = grid()
        model = random_model(g, 2, seed=5)
        fields = [random_field(g, 40 + c) for c in range(3)]
        base = forward_rgb(*fields, model)
        phi = 1.234
        rotated = [ComplexField2D(g, np.exp(1j * phi) * f.values) for f in fields]
        out = forward_rgb(*rotated, model)
        assert np.allclose(out.values, base.values, rtol=1e-12, atol=1e-13)

    def test_energy_never_created_without_skips(self):
        g = grid()
        model = random_model(g, 4, seed=6)
        fields = [random_field(g, 50 + c) for c in range(3)]
        out = forward_rgb(*fields, model)
        e_in = sum(f.energy() for f in fields)
        assert float(out.values.sum()) <= e_in * (1 + 1e-12)


class TestInitModel:
    def test_same_seed_bit_identical(self):
        a = init_model("lane-8", seed=7, side_px=32, z_m=Z)
        b = init_model("lane-8", seed=7, side_px=32, z_m=Z)
        for (_, _, ta), (_, _, tb) in zip(a.thetas(), b.thetas()):
            assert np.array_equal(ta, tb)

    def test_different_seed_differs(self):
        a = init_model("lane-8", seed=7, side_px=32, z_m=Z)
        b = init_model("lane-8", seed=8, side_px=32, z_m=Z)
        assert not np.array_equal(a.channels[0].masks[0].theta, b.channels[0].masks[0].theta)

    def test_lane_preset_has_24_masks(self):
        model = init_model("lane-8", seed=0, side_px=32, z_m=Z)
        assert sum(1 for _ in model.thetas()) == 24
        assert model.skips == (SkipSpec(1, 6), SkipSpec(2, 7), SkipSpec(3, 8))

    def test_cityscapes15_grid_side(self):
        model = init_model("cityscapes-15", seed=0)
        assert model.grid.side_px == 480
        assert model.layer_count == 15
        assert model.skips == (SkipSpec(1, 15), SkipSpec(2, 14), SkipSpec(3, 13))

    def test_cityscapes12_topology(self):
        model = init_model("cityscapes-12", seed=0)
        assert model.layer_count == 12
        assert model.skips == (SkipSpec(1, 12), SkipSpec(2, 11), SkipSpec(3, 10))

    def test_unknown_preset_rejected(self):
        with pytest.raises(ValueError):
            init_model("resnet-50", seed=0)

    def test_custom_requires_geometry(self):
        with pytest.raises(ValueError):
            init_model("custom", seed=0)

    def test_phases_cover_full_circle(self):
        model = init_model("custom", seed=0, side_px=64, layers=2, z_m=Z)
        th = model.channels[0].masks[0].theta
        assert th.min() >= 0.0 and th.max() < 2 * np.pi and th.max() > 5.0

    def test_per_channel_wavelength_override(self):
        model = init_model(
            "custom", seed=0, side_px=16, layers=1,
            wavelength_rgb=(630e-9, 532e-9, 450e-9), z_m=Z,
        )
        assert model.wavelengths_m == (630e-9, 532e-9, 450e-9)
