import numpy as np
import pytest
from hypothesis import given, strategies as st

from etainv.eta import (
    EtaError, EtaFamily, ProviderUnavailable, RegionMask, SaliencyContext, constant, disk_map, eta_at, eta_field,
    eta_of_u, linear_intercept, load_mask_grid, normalize_map, piecewise, power_intercept, saliency_from_provider,
    save_mask_grid, slope_family,
)

U_GRID = [0.0, 0.25, 0.5, 0.75, 1.0]


class TestFamilies:
    @pytest.mark.parametrize(
        "fam, curve",
        [
            (linear_intercept(0.2, 0.3), lambda x: 0.28571428571428575 * ((1 - x) - 0.3)),
            (linear_intercept(0.7, 0.6), lambda x: 1.7499999999999998 * ((1 - x) - 0.6)),
            (linear_intercept(0.2, 0.0, offset=0.6), lambda x: 0.20000000000000007 * ((1 - x) - 0.0) + 0.6),
        ],
        ids=["etainv1", "etainv2", "etainv3"],
    )
    @pytest.mark.parametrize("u", U_GRID)
    def test_plotted_curves(self, fam, curve, u):
        x = 1 - u
        assert abs(eta_at(fam, u * 40, 40) - max(curve(x), 0.0)) <= 1e-12

    @pytest.mark.parametrize(
        "p, coef",
        [(1 / 3, 0.9500461658082172), (0.5, 1.1067971810589328), (2.0, 4.374999999999999), (3.0, 10.937499999999996)],
    )
    def test_power_coefficients(self, p, coef):
        fam = power_intercept(0.7, 0.6, p)
        assert fam.slope == pytest.approx(coef, rel=1e-14)

    @pytest.mark.parametrize(
        "ei, ti, coef",
        [(0.6, 0.3, 0.8571428571428572), (0.8, 0.3, 1.142857142857143), (1.0, 0.3, 1.4285714285714286),
         (0.6, 0.5, 1.2), (0.8, 0.5, 1.6), (1.0, 0.5, 2.0), (0.6, 0.7, 1.9999999999999996),
         (0.8, 0.7, 2.6666666666666665), (1.0, 0.7, 3.333333333333333)],
    )
    def test_intercept_grid_coefficients(self, ei, ti, coef):
        assert linear_intercept(ei, ti).slope == pytest.approx(coef, rel=1e-14)

    def test_constant_zero(self):
        assert all(eta_at(constant(0.0), t, 10) == 0.0 for t in range(1, 11))

    def test_piecewise_axis(self):
        fam = piecewise(2.0, T_a=3.0, T_b=1.0)
        assert eta_at(fam, 4.0, 5.0) == 2.0
        assert eta_at(fam, 2.0, 5.0) == pytest.approx(1.0)
        assert eta_at(fam, 0.5, 5.0) == 0.0

    def test_slope_family_table(self):
        fam = slope_family(-1.0, 10)
        assert eta_at(fam, 10, 10) == pytest.approx(1.0)
        assert eta_at(fam, 5, 10) == pytest.approx(0.5)
        with pytest.raises(EtaError):
            eta_at(fam, 3, 20)

    @pytest.mark.parametrize(
        "kw",
        [{"kind": "nope"}, {"eta_intercept": -1.0}, {"t_intercept": 1.0}, {"exponent_p": 0.0},
         {"kind": "piecewise_prop3", "T_a": 1.0, "T_b": 2.0}, {"kind": "explicit_table"}],
    )
    def test_invalid(self, kw):
        with pytest.raises(EtaError):
            EtaFamily(**kw)

    def test_record_roundtrip(self):
        for fam in (power_intercept(0.3, 0.2, 2.0, 0.1), slope_family(0.4, 7), piecewise(1.0, 2.0, 1.0)):
            assert EtaFamily.from_json(fam.to_json()) == fam

    def test_unknown_record_field(self):
        with pytest.raises(EtaError, match="unknown"):
            EtaFamily.from_record({"kind": "constant", "slope": 1.0})

    @given(st.floats(0, 2), st.floats(0, 0.95), st.floats(0.2, 4), st.floats(0, 1))
    def test_clamped_below_intercept_and_anchored(self, ei, ti, p, off):
        fam = power_intercept(ei, ti, p, off)
        u = np.linspace(0, ti, 17)
        np.testing.assert_array_equal(eta_of_u(fam, u), off)
        assert abs(eta_of_u(fam, 1.0) - (ei + off)) <= 1e-12

    @given(st.floats(0, 1), st.floats(0.01, 1), st.floats(0, 0.9))
    def test_monotone_in_intercept(self, ei, bump, ti):
        u = np.linspace(ti + 1e-3, 1, 11)
        assert np.all(eta_of_u(linear_intercept(ei + bump, ti), u) > eta_of_u(linear_intercept(ei, ti), u))


class TestMaskAndField:
    def test_saturated_mask(self):
        fam = linear_intercept(0.7, 0.6)
        f = eta_field(fam, RegionMask(np.ones((3, 3))), 9, 10, (3, 3))
        np.testing.assert_array_equal(f, eta_at(fam, 9, 10))

    def test_empty_mask(self):
        f = eta_field(constant(0.5), RegionMask(np.zeros((3, 3))), 5, 10, (3, 3))
        assert not f.any()

    def test_threshold_gating(self):
        vals = np.array([[0.1, 0.3], [0.3, 0.1]])
        f = eta_field(constant(0.5), RegionMask(vals, threshold=0.2), 5, 10, (2, 2))
        np.testing.assert_array_equal(f != 0, vals == 0.3)

    def test_smooth_mode_scales(self):
        vals = np.array([0.1, 0.5, 1.0])
        f = eta_field(constant(0.4), RegionMask(vals, mode="smooth"), 1, 1, (3,))
        np.testing.assert_allclose(f, 0.4 * vals)

    def test_shape_mismatch(self):
        with pytest.raises(EtaError):
            eta_field(constant(0.5), RegionMask(np.ones((2, 2))), 1, 1, (3, 3))

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(0, 1))
    def test_binarize_idempotent_and_gating(self, vals, thr):
        m = RegionMask(np.array(vals), threshold=thr)
        again = RegionMask(m.binarized(), threshold=thr).binarized()
        if thr > 0:
            np.testing.assert_array_equal(again, m.binarized())
        fam = constant(0.3)
        np.testing.assert_array_equal(eta_field(fam, m, 1, 1, (len(vals),)), 0.3 * m.binarized())

    @pytest.mark.parametrize("vals", [[-0.1], [1.5]])
    def test_values_range(self, vals):
        with pytest.raises(EtaError):
            RegionMask(np.array(vals))


class TestSaliency:
    def test_disk_peaks_at_center(self):
        m = saliency_from_provider("synthetic", SaliencyContext(synthetic=disk_map(9, 9)))
        assert m.values[4, 4] == 1.0
        assert m.values[0, 0] == 0.0 and m.values[8, 8] == 0.0

    @pytest.mark.parametrize("binary", [False, True])
    def test_ground_truth_file(self, tmp_path, binary):
        grid = (np.arange(12).reshape(3, 4) % 2).astype(float)
        path = tmp_path / "mask.rmsk"
        save_mask_grid(grid, path, binary=binary)
        m = saliency_from_provider("ground_truth", SaliencyContext(mask_file=str(path)))
        np.testing.assert_array_equal(m.values, grid)

    def test_text_format_layout(self, tmp_path):
        path = tmp_path / "m.txt"
        save_mask_grid(np.array([[0.0, 1.0, 0.5]]), path)
        assert path.read_text().splitlines()[0] == "3 1"

    @pytest.mark.parametrize(
        "payload", [b"RMSK\x02\x00\x00\x00\x02\x00\x00\x00abc", b"2 2\n0 1 1\n", b"x y\n", b"RMSK\x01"],
    )
    def test_malformed_file(self, tmp_path, payload):
        path = tmp_path / "bad"
        path.write_bytes(payload)
        with pytest.raises(EtaError):
            load_mask_grid(path)

    def test_forward_mean_constant_maps(self):
        traj = [(t, np.zeros((2, 3))) for t in range(4)]
        ctx = SaliencyContext(callback=lambda x, t, c: np.full((2, 3), 0.37), forward=traj)
        np.testing.assert_array_equal(saliency_from_provider("forward_mean", ctx).values, 1.0)

    def test_forward_mean_averages(self):
        traj = [(0, None), (1, None), (2, None)]
        ctx = SaliencyContext(callback=lambda x, t, c: np.array([0.0, float(t)]), forward=traj)
        np.testing.assert_array_equal(saliency_from_provider("forward_mean", ctx).values, [0.0, 1.0])

    @pytest.mark.parametrize("provider", ["forward_mean", "backward_source", "backward_target", "ground_truth",
                                          "synthetic"])
    def test_unavailable(self, provider):
        with pytest.raises(ProviderUnavailable):
            saliency_from_provider(provider, SaliencyContext())

    def test_unknown_provider(self):
        with pytest.raises(EtaError):
            saliency_from_provider("clip", SaliencyContext())

    def test_normalize(self):
        np.testing.assert_allclose(normalize_map([2.0, 4.0, 3.0]), [0.0, 1.0, 0.5])
