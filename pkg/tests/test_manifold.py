import unittest
import sys
import os
import math
import time

import numpy as np
from numpy.testing import assert_allclose

# Add repository root to path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.errors import ChartMismatchError, DomainError, GeometryError, UnsupportedFrameError
from src.manifold import (
    Chart,
    FrameField,
    ManifoldPoint,
    TangentVector,
    dist,
    eigenvalue_clamp_count,
    exp_map,
    frame_at,
    geodesic,
    inner,
    log_map,
    logm,
    norm,
    parallel_transport,
    point_from_dict,
    point_to_dict,
    random_point,
    random_tangent,
    zero_tangent,
)

S3 = Chart.sphere(3)
SPD2 = Chart.spd(2)
NORTH = ManifoldPoint(S3, [0.0, 0.0, 0.0, 1.0])
E1 = ManifoldPoint(S3, [1.0, 0.0, 0.0, 0.0])
ID2 = ManifoldPoint(SPD2, np.eye(2))


class TestPoints(unittest.TestCase):
    def test_sphere_point_must_be_unit(self):
        with self.assertRaises(DomainError):
            ManifoldPoint(S3, [0.0, 0.0, 0.0, 2.0])

    def test_spd_point_must_be_positive_definite(self):
        with self.assertRaises(DomainError):
            ManifoldPoint(SPD2, [[1.0, 0.0], [0.0, -1.0]])
        with self.assertRaises(DomainError):
            ManifoldPoint(SPD2, [[1.0, 0.5], [0.0, 1.0]])

    def test_wrong_shape(self):
        with self.assertRaises(GeometryError):
            ManifoldPoint(S3, [1.0, 0.0, 0.0])

    def test_sphere_tangent_must_be_orthogonal(self):
        with self.assertRaises(DomainError):
            TangentVector(NORTH, [0.0, 0.0, 0.0, 1.0])

    def test_coords_are_read_only(self):
        with self.assertRaises(ValueError):
            NORTH.coords[0] = 1.0

    def test_dict_shape(self):
        p = ManifoldPoint(SPD2, [[2.0, 0.5], [0.5, 1.0]])
        data = point_to_dict(p)
        self.assertEqual(data["chart"], "spd")
        self.assertEqual(data["n"], 2)
        self.assertEqual(data["coords"], [2.0, 0.5, 0.5, 1.0])
        assert_allclose(point_from_dict(data).coords, p.coords)

    def test_malformed_dict(self):
        with self.assertRaises(GeometryError):
            point_from_dict({"chart": "sphere", "coords": [1.0]})


class TestExpLog(unittest.TestCase):
    def test_exp_zero(self):
        for p in (NORTH, ID2):
            assert_allclose(exp_map(p, zero_tangent(p)).coords, p.coords)

    def test_exp_quarter_circle(self):
        v = TangentVector(NORTH, [math.pi / 2, 0.0, 0.0, 0.0])
        assert_allclose(exp_map(NORTH, v).coords, [1.0, 0.0, 0.0, 0.0], atol=1e-15)

    def test_exp_spd(self):
        v = TangentVector(ID2, math.log(2.0) * np.eye(2))
        assert_allclose(exp_map(ID2, v).coords, 2.0 * np.eye(2), atol=1e-14)

    def test_exp_injectivity_guard(self):
        v = TangentVector(NORTH, [math.pi, 0.0, 0.0, 0.0])
        with self.assertRaises(DomainError):
            exp_map(NORTH, v)

    def test_exp_base_mismatch(self):
        v = TangentVector(E1, [0.0, 1.0, 0.0, 0.0])
        with self.assertRaises(ChartMismatchError):
            exp_map(NORTH, v)

    def test_log_same_point(self):
        assert_allclose(log_map(NORTH, NORTH).components, np.zeros(4))

    def test_log_quarter_circle(self):
        assert_allclose(log_map(NORTH, E1).components, [math.pi / 2, 0.0, 0.0, 0.0], atol=1e-15)

    def test_log_spd(self):
        q = ManifoldPoint(SPD2, 2.0 * np.eye(2))
        assert_allclose(log_map(ID2, q).components, math.log(2.0) * np.eye(2), atol=1e-14)

    def test_log_antipodal(self):
        south = ManifoldPoint(S3, [0.0, 0.0, 0.0, -1.0])
        with self.assertRaises(DomainError):
            log_map(NORTH, south)

    def test_log_chart_mismatch(self):
        with self.assertRaises(ChartMismatchError):
            log_map(NORTH, ManifoldPoint(Chart.sphere(2), [0.0, 0.0, 1.0]))

    def test_nearby_points_keep_precision(self):
        q = ManifoldPoint(S3, [1e-9, 0.0, 0.0, math.sqrt(1.0 - 1e-18)])
        self.assertAlmostEqual(dist(NORTH, q), 1e-9, delta=1e-22)


class TestDistance(unittest.TestCase):
    def test_spd_examples(self):
        self.assertEqual(dist(ID2, ID2), 0.0)
        q = ManifoldPoint(SPD2, 2.0 * np.eye(2))
        self.assertAlmostEqual(dist(ID2, q), math.sqrt(2.0) * math.log(2.0), places=14)

    def test_sphere_example(self):
        self.assertAlmostEqual(dist(NORTH, E1), math.pi / 2, places=15)

    def test_euclid(self):
        c = Chart.euclid(2)
        self.assertAlmostEqual(dist(ManifoldPoint(c, [0.0, 0.0]), ManifoldPoint(c, [3.0, 4.0])), 5.0)


class TestTransportAndGeodesic(unittest.TestCase):
    def test_transport_identity(self):
        v = TangentVector(NORTH, [0.3, -0.2, 0.1, 0.0])
        assert_allclose(parallel_transport(NORTH, NORTH, v).components, v.components)

    def test_transport_orthogonal_direction_fixed(self):
        v = TangentVector(NORTH, [0.0, 1.0, 0.0, 0.0])
        assert_allclose(parallel_transport(NORTH, E1, v).components, [0.0, 1.0, 0.0, 0.0], atol=1e-15)

    def test_transport_spd_scaling(self):
        # E = (q p^-1)^{1/2} = 2 Id, so E v E^T = 4 Id; the affine-invariant norm stays sqrt(2)
        q = ManifoldPoint(SPD2, 4.0 * np.eye(2))
        v = TangentVector(ID2, np.eye(2))
        w = parallel_transport(ID2, q, v)
        assert_allclose(w.components, 4.0 * np.eye(2), atol=1e-13)
        self.assertAlmostEqual(norm(w), norm(v), places=12)

    def test_geodesic_endpoints(self):
        p0, v0 = geodesic(NORTH, E1, 0.0)
        assert_allclose(p0.coords, NORTH.coords)
        assert_allclose(v0.components, log_map(NORTH, E1).components)
        p1, v1 = geodesic(NORTH, E1, 1.0)
        assert_allclose(p1.coords, E1.coords, atol=1e-15)
        self.assertAlmostEqual(norm(v1), dist(NORTH, E1), places=14)

    def test_geodesic_midpoint(self):
        mid, vel = geodesic(NORTH, E1, 0.5)
        h = math.sqrt(2.0) / 2
        assert_allclose(mid.coords, [h, 0.0, 0.0, h], atol=1e-15)
        self.assertAlmostEqual(norm(vel), math.pi / 2, places=14)

    def test_geodesic_parameter_range(self):
        with self.assertRaises(DomainError):
            geodesic(NORTH, E1, 1.5)


class TestFrames(unittest.TestCase):
    def test_s3_frame_at_north_pole(self):
        frame = frame_at(FrameField.for_chart(S3), NORTH)
        assert_allclose(frame[0].components, [0.0, 0.0, -1.0, 0.0])
        assert_allclose(frame[1].components, [0.0, 1.0, 0.0, 0.0])
        assert_allclose(frame[2].components, [-1.0, 0.0, 0.0, 0.0])

    def test_euclid_frame(self):
        c = Chart.euclid(3)
        frame = frame_at(FrameField.for_chart(c), ManifoldPoint(c, [1.0, 2.0, 3.0]))
        assert_allclose(np.array([e.components for e in frame]), np.eye(3))

    def test_orthonormal_at_random_points(self):
        rng = np.random.default_rng(7)
        for chart in (S3, SPD2, Chart.spd(3)):
            field = FrameField.for_chart(chart)
            for _ in range(20):
                p = random_point(chart, rng)
                frame = frame_at(field, p)
                self.assertEqual(len(frame), chart.dim)
                gram = np.array([[inner(a, b) for b in frame] for a in frame])
                assert_allclose(gram, np.eye(chart.dim), atol=1e-10)

    def test_no_global_frame_on_s2(self):
        with self.assertRaises(UnsupportedFrameError):
            FrameField.for_chart(Chart.sphere(2))

    def test_frame_chart_mismatch(self):
        with self.assertRaises(UnsupportedFrameError):
            frame_at(FrameField.for_chart(S3), ID2)


class TestSpdMatrixFunctions(unittest.TestCase):
    def test_metric_two_ways(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            p = random_point(Chart.spd(3), rng)
            u = random_tangent(p, rng)
            v = random_tangent(p, rng)
            lam, U = np.linalg.eigh(p.coords)
            ut = U.T @ u.components @ U
            vt = U.T @ v.components @ U
            eigen = float(np.sum(ut * vt.T / np.outer(lam, lam)))
            self.assertAlmostEqual(inner(u, v), eigen, delta=1e-10 * max(1.0, abs(eigen)))

    def test_log_clamps_tiny_eigenvalues(self):
        before = eigenvalue_clamp_count()
        with self.assertLogs("src.manifold", level="WARNING"):
            out = logm(np.diag([1.0, 1e-20]))
        self.assertEqual(eigenvalue_clamp_count(), before + 1)
        self.assertAlmostEqual(out[1, 1], math.log(1e-14))


class TestGeometrySuite(unittest.TestCase):
    """Seeded random (p, q, v) triples per chart."""

    TRIPLES = 1000
    TIMES = [0.1 * i for i in range(1, 10)]
    BUDGET_S = 5.0

    def _triples(self, chart, rng, reach):
        for i in range(self.TRIPLES):
            p = random_point(chart, rng)
            q = random_point(chart, rng, center=p, radius=reach)
            v = random_tangent(p, rng, length=float(rng.uniform(0.0, reach)))
            w = random_tangent(p, rng)
            yield self.TIMES[i % len(self.TIMES)], p, q, v, w

    def _gap(self, a, b):
        return float(np.max(np.abs(a.components - b.components)))

    def _check_chart(self, chart, seed, reach):
        started = time.perf_counter()
        rng = np.random.default_rng(seed)
        for t, p, q, v, w in self._triples(chart, rng, reach):
            # exp / log round trip and distance
            e = exp_map(p, v)
            self.assertLessEqual(self._gap(log_map(p, e), v), 1e-9)
            self.assertAlmostEqual(dist(p, e), norm(v), delta=1e-10)
            self.assertAlmostEqual(dist(p, q), norm(log_map(p, q)), delta=1e-10)
            self.assertAlmostEqual(dist(p, q), dist(q, p), delta=1e-12)

            # transport isometry and reversibility
            pv, pw = parallel_transport(p, q, v), parallel_transport(p, q, w)
            self.assertAlmostEqual(inner(pv, pw), inner(v, w), delta=1e-9)
            self.assertLessEqual(self._gap(parallel_transport(q, p, pv), v), 1e-9)

            # geodesic velocity equals log_{g(t)} q - log_{g(t)} p
            g, vel = geodesic(p, q, t)
            self.assertLessEqual(norm(vel - (log_map(g, q) - log_map(g, p))), 1e-9)
        self.assertLess(time.perf_counter() - started, self.BUDGET_S)

    def test_sphere_s3(self):
        self._check_chart(S3, 101, 2.5)

    def test_spd2(self):
        self._check_chart(SPD2, 202, 2.0)

    def test_spd4(self):
        self._check_chart(Chart.spd(4), 303, 2.0)

    def test_spd_geodesic_at_all_times(self):
        rng = np.random.default_rng(404)
        for _ in range(50):
            p = random_point(SPD2, rng)
            q = random_point(SPD2, rng, center=p, radius=2.0)
            for t in self.TIMES:
                g, vel = geodesic(p, q, t)
                self.assertLessEqual(norm(vel - (log_map(g, q) - log_map(g, p))), 1e-9)


if __name__ == '__main__':
    unittest.main()
