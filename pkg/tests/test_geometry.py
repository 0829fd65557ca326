import csv

import numpy as np
import pytest

from ccrk.errors import AntipodalTexts, DegenerateDirection, InvalidConfig
from ccrk.geometry import (
    DEFAULT_ANGLE_GRID,
    LEMMA_PRACTICAL_VS_CORRECT,
    LEMMA_SINGLE_TARGET_BIAS,
    TripleConfig,
    angle_between,
    lemma_sweep,
    omega_angle,
    summarize_sweep,
    theta_angle,
    triple_from_angles,
    write_sweep_csv,
)
from ccrk.numerics import Rng, normalize_rows


def unit(*xs):
    v = np.array(xs, dtype=np.float64)
    return v / np.linalg.norm(v)


class TestTheta:
    def test_zero_when_image_equals_target_text(self):
        t_m = unit(0.3, -0.2, 0.9)
        t_n = unit(1.0, 0.0, 0.0)
        assert theta_angle(t_m.copy(), t_m, t_n) == 0.0

    def test_planar_fifteen_degrees(self):
        t_n = np.array([1.0, 0.0])
        t_m = np.array([np.cos(np.pi / 3), np.sin(np.pi / 3)])
        i = np.array([0.0, 1.0])
        assert theta_angle(i, t_m, t_n) == pytest.approx(np.radians(15), abs=1e-12)
        assert theta_angle(i, t_m, t_n) == pytest.approx(0.261799, abs=1e-6)

    def test_antipodal_collinear(self):
        t_n = unit(0.0, 1.0, 0.0)
        t_m = -t_n
        assert theta_angle(t_m.copy(), t_m, t_n) == 0.0

    def test_degenerate_directions(self):
        v = unit(1.0, 0.0)
        with pytest.raises(DegenerateDirection):
            theta_angle(unit(0.0, 1.0), v, v.copy())
        with pytest.raises(DegenerateDirection):
            theta_angle(v.copy(), unit(0.0, 1.0), v)


class TestOmega:
    def test_zero_when_texts_coincide(self):
        t = unit(0.1, 0.7, -0.3)
        i = unit(1.0, 0.0, 0.0)
        assert omega_angle(i, t, t.copy(), target="m") == 0.0
        assert omega_angle(i, t, t.copy(), target="n") == 0.0

    def test_planar_fifteen_degrees(self):
        i = np.array([1.0, 0.0])
        t_m = np.array([0.0, 1.0])                       # 90 degrees
        t_n = np.array([np.cos(np.pi / 6), np.sin(np.pi / 6)])  # 30 degrees
        assert omega_angle(i, t_m, t_n, target="m") == pytest.approx(
            np.radians(15), abs=1e-12)

    def test_mirror_symmetry_when_alpha_equals_beta(self):
        # texts symmetric about the x-axis, image off-plane at equal angles
        t_m = np.array([np.cos(0.7), np.sin(0.7), 0.0])
        t_n = np.array([np.cos(0.7), -np.sin(0.7), 0.0])
        i = np.array([np.cos(1.1), 0.0, np.sin(1.1)])
        assert angle_between(i, t_m) == pytest.approx(angle_between(i, t_n), abs=1e-12)
        assert omega_angle(i, t_m, t_n, target="m") == pytest.approx(
            omega_angle(i, t_m, t_n, target="n"), abs=1e-12)

    def test_antipodal_texts_rejected(self):
        t = unit(0.0, 1.0)
        with pytest.raises(AntipodalTexts):
            omega_angle(unit(1.0, 0.0), t, -t, target="m")

    def test_bad_target(self):
        t = unit(0.0, 1.0, 0.0)
        with pytest.raises(InvalidConfig):
            omega_angle(unit(1.0, 0.0, 0.0), t, unit(0.0, 0.0, 1.0), target="x")


class TestRotationInvariance:
    @pytest.mark.parametrize("seed", range(3))
    def test_both_angles(self, seed):
        gen = np.random.default_rng(seed)
        i, t_m, t_n = normalize_rows(gen.standard_normal((3, 9)))
        q, _ = np.linalg.qr(gen.standard_normal((9, 9)))
        assert theta_angle(i @ q.T, t_m @ q.T, t_n @ q.T) == pytest.approx(
            theta_angle(i, t_m, t_n), abs=1e-9)
        assert omega_angle(i @ q.T, t_m @ q.T, t_n @ q.T, "m") == pytest.approx(
            omega_angle(i, t_m, t_n, "m"), abs=1e-9)


class TestTripleFromAngles:
    def test_realizes_exact_angles(self):
        alpha, beta, gamma = 0.9, 1.1, 0.8
        i, t_m, t_n = triple_from_angles(alpha, beta, gamma, dim=5)
        assert angle_between(i, t_m) == pytest.approx(alpha, abs=1e-12)
        assert angle_between(i, t_n) == pytest.approx(beta, abs=1e-12)
        assert angle_between(t_m, t_n) == pytest.approx(gamma, abs=1e-12)
        for v in (i, t_m, t_n):
            assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)

    def test_unrealizable_triple_rejected(self):
        with pytest.raises(InvalidConfig):
            triple_from_angles(0.1, 0.1, 3.0, dim=3)

    def test_config_validation(self):
        TripleConfig(dim=4, alpha=0.5, beta=0.5, gamma=0.7,
                     mode="fixed_angles").validate()
        with pytest.raises(InvalidConfig):
            TripleConfig(dim=4, alpha=0.1, beta=0.1, gamma=3.0,
                         mode="fixed_angles").validate()
        with pytest.raises(InvalidConfig):
            TripleConfig(dim=1).validate()


class TestSweeps:
    def test_controlled_angle_placed_exactly(self):
        samples = lemma_sweep(TripleConfig(dim=8), LEMMA_PRACTICAL_VS_CORRECT, 50,
                              Rng(0), grid=(0.25,))
        assert all(s.alpha == pytest.approx(0.25, abs=1e-12) for s in samples[0])
        samples = lemma_sweep(TripleConfig(dim=8), LEMMA_SINGLE_TARGET_BIAS, 50,
                              Rng(0), grid=(0.25,))
        assert all(s.gamma == pytest.approx(0.25, abs=1e-12) for s in samples[0])

    def test_zero_grid_point_mean_is_exactly_zero(self):
        samples = lemma_sweep(TripleConfig(dim=8), LEMMA_PRACTICAL_VS_CORRECT, 40,
                              Rng(0), grid=(0.0,))
        assert all(s.theta == 0.0 for s in samples[0])
        samples = lemma_sweep(TripleConfig(dim=8), LEMMA_SINGLE_TARGET_BIAS, 40,
                              Rng(0), grid=(0.0,))
        assert all(s.omega == 0.0 for s in samples[0])

    @pytest.mark.parametrize("which", [LEMMA_PRACTICAL_VS_CORRECT,
                                       LEMMA_SINGLE_TARGET_BIAS])
    def test_means_decrease_along_grid(self, which):
        samples = lemma_sweep(TripleConfig(dim=16), which, 400, Rng(7))
        points = summarize_sweep(samples, which, DEFAULT_ANGLE_GRID, 7)
        means = [p.mean for p in points]
        assert all(a >= b for a, b in zip(means, means[1:]))

    def test_deterministic(self):
        a = lemma_sweep(TripleConfig(dim=6), LEMMA_SINGLE_TARGET_BIAS, 30, Rng(3),
                        grid=(0.5, 0.05))
        b = lemma_sweep(TripleConfig(dim=6), LEMMA_SINGLE_TARGET_BIAS, 30, Rng(3),
                        grid=(0.5, 0.05))
        assert all(x.omega == y.omega for pa, pb in zip(a, b) for x, y in zip(pa, pb))

    def test_csv_format(self, tmp_path):
        samples = lemma_sweep(TripleConfig(dim=6), LEMMA_PRACTICAL_VS_CORRECT, 20,
                              Rng(1), grid=(0.5, 0.05))
        points = summarize_sweep(samples, LEMMA_PRACTICAL_VS_CORRECT, (0.5, 0.05), 1)
        path = tmp_path / "sweep.csv"
        write_sweep_csv(points, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["controlled_angle_rad", "mean_rad", "p5_rad", "p95_rad",
                           "n_samples", "seed"]
        assert len(rows) == 3
        assert float(rows[1][0]) == 0.5
        assert int(rows[1][4]) == 20 and int(rows[1][5]) == 1
        assert all(float(r[2]) <= float(r[1]) <= float(r[3]) for r in rows[1:])
