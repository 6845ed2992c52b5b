import time
import unittest

import numpy as np
import numpy.testing as npt
import sympy

from flatforge.algebra.loop_algebra import DecompositionRule, from_blocks
from flatforge.data.presets import clifford, random_initial
from flatforge.data.validation import validate_frames
from flatforge.errors import GridError, InvariantError, LoopAlgebraError
from flatforge.flows.aks_flow import FlowConfig, GridSpec, integrate_flow
from flatforge.flows.frame_builder import (
    clifford_connection,
    clifford_frame,
    clifford_immersion,
    connection_at,
    flatness_residuals,
    frame_connection_defect,
    gauge_block_defect,
    immersion_det,
    immersion_samples,
    integrate_frame,
    killing_residual,
    origin_frame,
    parallelizing_gauge,
    solve_coordinate_change,
)

SIMPLE = DecompositionRule.SIMPLE
CURVED_FLAT = DecompositionRule.CURVED_FLAT


def small_flow(rule=SIMPLE, seed=21, spacing=0.01, upper=0.04, scale=0.5, d=2):
    X0 = random_initial(2, d, seed, scale=scale)
    grid = GridSpec((0.0, 0.0), (upper, upper), spacing)
    return integrate_flow(X0, FlowConfig(n=2, rule=rule, grid=grid))


class TestConnection(unittest.TestCase):
    def test_simple_connection_formula(self):
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(1000):
            K = rng.uniform(-1, 1, (2, 2))
            A1, A2 = connection_at(from_blocks(K), SIMPLE, 1.0)
            npt.assert_array_equal(A1, from_blocks(K).coefficient(1).real)
            worst = max(worst, float(np.max(np.abs(A2[:2, 2:] + K @ K.T @ K))))
            worst = max(worst, float(np.max(np.abs(A2[2:, :2] - (K @ K.T @ K).T))))
        self.assertLess(worst, 1e-12)

    def test_printed_entries_symbolically(self):
        x1, x2, y1, y2 = sympy.symbols("x1 x2 y1 y2", real=True)
        K = sympy.Matrix([[x1, x2], [y1, y2]])
        X1 = sympy.zeros(4, 4)
        X1[:2, 2:] = K
        X1[2:, :2] = -K.T
        C = -(X1 ** 3)[:2, 2:]
        printed = sympy.Matrix([
            [x1 * (x1**2 + y1**2) + x2 * (x1 * x2 + y1 * y2), x1 * (x1 * x2 + y1 * y2) + x2 * (x2**2 + y2**2)],
            [y1 * (x1**2 + y1**2) + y2 * (x1 * x2 + y1 * y2), y1 * (x1 * x2 + y1 * y2) + y2 * (x2**2 + y2**2)],
        ])
        self.assertEqual(sympy.expand(C - printed), sympy.zeros(2, 2))
        self.assertEqual(sympy.expand(C - K * K.T * K), sympy.zeros(2, 2))

    def test_special_blocks(self):
        _, A2 = connection_at(from_blocks(np.eye(2)), SIMPLE, 1.0)
        npt.assert_allclose(A2[:2, 2:], -np.eye(2), atol=1e-15)
        a, b = 0.6, 0.8
        K = np.array([[a, b], [0.0, 0.0]])
        _, A2 = connection_at(from_blocks(K), SIMPLE, 1.0)
        npt.assert_allclose(A2[:2, 2:], -K, atol=1e-15)

    def test_simple_rule_has_no_diagonal_blocks(self):
        for A in connection_at(random_initial(2, 2, seed=2), SIMPLE, 0.7):
            npt.assert_array_equal(A[:2, :2], np.zeros((2, 2)))
            npt.assert_array_equal(A[2:, 2:], np.zeros((2, 2)))
            npt.assert_allclose(A, -A.T, atol=1e-14)

    def test_bad_arguments(self):
        X = random_initial(2, 1, seed=3)
        with self.assertRaises(LoopAlgebraError):
            connection_at(X, SIMPLE, 0.0)
        with self.assertRaises(LoopAlgebraError):
            connection_at(1j * X, SIMPLE, 1.0)


class TestImmersionDet(unittest.TestCase):
    @staticmethod
    def det_of(x1, y1, x2, y2):
        return immersion_det(from_blocks(np.array([[x1, x2], [y1, y2]], dtype=float)))

    def test_examples(self):
        self.assertAlmostEqual(self.det_of(1, 0, 0, 1), 0.0, places=14)
        self.assertAlmostEqual(self.det_of(2, 0, 1, 1), 4.0, places=12)
        self.assertEqual(immersion_det(from_blocks(np.zeros((2, 2)))), 0.0)

    def test_factored_form(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(1000):
            x1, y1, x2, y2 = rng.uniform(-1, 1, 4)
            expected = (x1 * x2 + y1 * y2) * (x1 * y2 - y1 * x2)
            worst = max(worst, abs(self.det_of(x1, y1, x2, y2) - expected))
        self.assertLess(worst, 1e-10)

    def test_row_convention_sign(self):
        rng = np.random.default_rng(6)
        for n in (2, 3):
            X1 = from_blocks(rng.uniform(-1, 1, (n, n))).coefficient(1).real
            rows = [np.linalg.matrix_power(X1, 2 * i - 1)[n, :n] for i in range(1, n + 1)]
            literal = np.linalg.det(np.array(rows))
            expected = (-1) ** (n * (n + 1) // 2) * literal
            self.assertLess(abs(immersion_det(from_blocks(X1[:n, n:])) - expected), 1e-10 * max(1.0, abs(expected)))


class TestClifford(unittest.TestCase):
    def test_golden_torus(self):
        a, b = 0.6, 0.8
        start = time.perf_counter()
        preset = clifford(a, b)
        grid = GridSpec((0.0, 0.0), (2 * np.pi, 2 * np.pi), np.pi / 50)
        flow = integrate_flow(preset.X0, FlowConfig(n=2, rule=SIMPLE, h=1e-3, grid=grid, coords=preset.coords))
        frames = integrate_frame(flow, SIMPLE, 1.0, F0=preset.F0)
        elapsed = time.perf_counter() - start
        self.assertEqual(len(frames), 101 * 101)
        worst_f, worst_F = 0.0, 0.0
        for frame in frames.values():
            worst_f = max(worst_f, float(np.max(np.abs(frame.column(3) - clifford_immersion(a, b, frame.t)))))
            worst_F = max(worst_F, float(np.max(np.abs(frame.F - clifford_frame(a, b, frame.t)))))
        self.assertLess(worst_f, 1e-6)
        self.assertLess(worst_F, 1e-6)
        self.assertTrue(validate_frames(frames).ok)
        self.assertLess(elapsed, 30.0)

    def test_closed_forms_agree(self):
        a, b = 0.6, 0.8
        K1, K2 = clifford_connection(a, b)
        npt.assert_allclose(K1 @ K2, K2 @ K1, atol=1e-15)
        rng = np.random.default_rng(5)
        for s in rng.uniform(-4, 4, (10, 2)):
            F = clifford_frame(a, b, s)
            npt.assert_allclose(F.T @ F, np.eye(4), atol=1e-12)
            npt.assert_allclose(F[:, 2], clifford_immersion(a, b, s), atol=1e-12)

    def test_coordinate_change(self):
        preset = clifford(0.6, 0.8)
        fields = connection_at(preset.X0, SIMPLE, 1.0)
        for j, target in enumerate(clifford_connection(0.6, 0.8)):
            combined = sum(preset.coords[i, j] * fields[i] for i in range(2))
            npt.assert_allclose(combined, target, atol=1e-12)
        _, residual = solve_coordinate_change(preset.X0, SIMPLE, 1.0, [np.eye(4), np.zeros((4, 4))])
        self.assertGreater(residual, 0.1)

    def test_preset_rejects_off_circle_parameters(self):
        with self.assertRaises(LoopAlgebraError):
            clifford(0.6, 0.6)


class TestFrames(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.flow = small_flow(spacing=0.05, upper=0.2)
        cls.frames = integrate_frame(cls.flow)

    def test_origin_frame_is_identity(self):
        npt.assert_array_equal(self.frames[(0, 0)].F, np.eye(4))

    def test_frames_stay_orthogonal(self):
        report = validate_frames(self.frames)
        self.assertTrue(report.ok, str(report))

    def test_killing_identity(self):
        self.assertLess(killing_residual(self.flow, self.frames), 1e-6)

    def test_workers_do_not_change_results(self):
        parallel = integrate_frame(self.flow, workers=4)
        for index, frame in self.frames.items():
            npt.assert_array_equal(parallel[index].F, frame.F)

    def test_initial_frame_checks(self):
        with self.assertRaises(InvariantError):
            integrate_frame(self.flow, F0=np.diag([-1.0, 1.0, 1.0, 1.0]))
        with self.assertRaises(LoopAlgebraError):
            integrate_frame(self.flow, z0=0.0)

    def test_immersion_samples(self):
        samples = immersion_samples(self.flow, self.frames)
        self.assertEqual(set(samples), set(self.frames))
        for index, sample in samples.items():
            self.assertAlmostEqual(float(np.linalg.norm(sample.f)), 1.0, places=10)
            npt.assert_array_equal(sample.f, self.frames[index].column(3))
            self.assertEqual(sample.imm_det, immersion_det(self.flow.samples[index]))
        self.assertTrue(np.isnan(samples[(0, 0)].omega_residual))
        self.assertEqual(samples[(2, 2)].omega_residual, 0.0)
        other = immersion_samples(self.flow, self.frames, column=4)
        npt.assert_array_equal(other[(1, 1)].f, self.frames[(1, 1)].column(4))
        with self.assertRaises(LoopAlgebraError):
            immersion_samples(self.flow, self.frames, column=2)


class TestFlatness(unittest.TestCase):
    def test_simple_rule_is_exactly_flat(self):
        flow = small_flow(SIMPLE)
        residuals = flatness_residuals(integrate_frame(flow), flow.grid)
        self.assertEqual(len(residuals), 9)
        for omega, eta in residuals.values():
            self.assertEqual(omega, 0.0)
            self.assertEqual(eta, 0.0)

    def test_admissible_omega_is_flat(self):
        flow = small_flow(DecompositionRule.ADMISSIBLE)
        frames = integrate_frame(flow)
        residuals = flatness_residuals(frames, flow.grid)
        self.assertLess(max(omega for omega, _ in residuals.values()), 1e-4)
        self.assertLess(frame_connection_defect(frames, flow.grid), 1e-4)

    def test_curved_flat_blocks_are_flat(self):
        flow = small_flow(DecompositionRule.CURVED_FLAT)
        residuals = flatness_residuals(integrate_frame(flow), flow.grid)
        self.assertLess(max(max(pair) for pair in residuals.values()), 1e-4)

    def test_grid_too_small(self):
        flow = small_flow(spacing=0.01, upper=0.01)
        with self.assertRaises(GridError):
            flatness_residuals(integrate_frame(flow), flow.grid)


class TestFrameRule(unittest.TestCase):
    """Grids away from t = 0 recover F(0) with the rule the frames used."""

    def setUp(self):
        self.X0 = random_initial(2, 1, seed=22, scale=0.5)
        self.grid = GridSpec((0.1, 0.1), (0.2, 0.2), 0.05)
        self.R = clifford_frame(0.6, 0.8, [0.3, -0.4])

    def test_origin_frame_uses_the_given_rule(self):
        flow = integrate_flow(self.X0, FlowConfig(n=2, rule=SIMPLE, grid=self.grid))
        frames = integrate_frame(flow, CURVED_FLAT, F0=self.R)
        npt.assert_allclose(origin_frame(flow, frames, CURVED_FLAT), self.R, rtol=0, atol=1e-10)
        self.assertGreater(float(np.max(np.abs(origin_frame(flow, frames) - self.R))), 1e-4)

    def test_killing_identity_with_explicit_rule(self):
        flow = integrate_flow(self.X0, FlowConfig(n=2, rule=CURVED_FLAT, grid=self.grid))
        frames = integrate_frame(flow, CURVED_FLAT, F0=self.R)
        self.assertLess(killing_residual(flow, frames, CURVED_FLAT), 1e-6)


class TestParallelizingGauge(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        X0 = random_initial(2, 1, seed=23, scale=0.5)
        grid = GridSpec((0.0, 0.0), (0.2, 0.2), 0.1)
        cls.flows = {
            rule: integrate_flow(X0, FlowConfig(n=2, rule=rule, h=2e-3, grid=grid))
            for rule in (CURVED_FLAT, SIMPLE)
        }
        cls.frames = {
            (rule, z0): integrate_frame(flow, rule, z0)
            for rule, flow in cls.flows.items()
            for z0 in (1.0, 0.8)
        }
        cls.gauges = {
            z0: parallelizing_gauge(cls.frames[(CURVED_FLAT, z0)], cls.frames[(SIMPLE, z0)])
            for z0 in (1.0, 0.8)
        }

    def test_gauge_takes_curved_flat_frames_to_parallel_frames(self):
        curved, parallel = self.frames[(CURVED_FLAT, 1.0)], self.frames[(SIMPLE, 1.0)]
        for index, G in self.gauges[1.0].items():
            npt.assert_allclose(curved[index].F @ G, parallel[index].F, rtol=0, atol=1e-12)
            npt.assert_allclose(G.T @ G, np.eye(4), rtol=0, atol=1e-12)
        npt.assert_array_equal(self.gauges[1.0][(0, 0)], np.eye(4))

    def test_gauge_is_block_diagonal(self):
        for gauges in self.gauges.values():
            self.assertLess(max(gauge_block_defect(G) for G in gauges.values()), 1e-4)

    def test_gauge_depends_on_t_only(self):
        for index, G in self.gauges[1.0].items():
            npt.assert_allclose(self.gauges[0.8][index], G, rtol=0, atol=1e-4)
        self.assertGreater(float(np.max(np.abs(self.gauges[1.0][(2, 2)] - np.eye(4)))), 1e-3)

    def test_gauge_conjugates_the_flows(self):
        curved, parallel = self.flows[CURVED_FLAT], self.flows[SIMPLE]
        for index, G in self.gauges[1.0].items():
            moved = curved.samples[index].conjugate_by(G, G.T)
            self.assertLess((moved - parallel.samples[index]).norm(), 1e-4)

    def test_mismatched_frames(self):
        curved = self.frames[(CURVED_FLAT, 1.0)]
        with self.assertRaises(LoopAlgebraError):
            parallelizing_gauge(curved, self.frames[(SIMPLE, 0.8)])
        with self.assertRaises(GridError):
            parallelizing_gauge(curved, {(0, 0): curved[(0, 0)]})


class TestCompleteness(unittest.TestCase):
    def test_flows_and_frames_stay_finite(self):
        grid = GridSpec((-10.0, -10.0), (10.0, 10.0), 10.0)
        rules = list(DecompositionRule)
        for seed in range(20):
            rule = rules[seed % len(rules)]
            flow = integrate_flow(random_initial(2, 1, seed, scale=0.5), FlowConfig(n=2, rule=rule, h=0.2, grid=grid))
            frames = integrate_frame(flow, rule)
            self.assertEqual(len(frames), 9)
            for index, X in flow.samples.items():
                self.assertTrue(np.all(np.isfinite(X.coeffs)), (seed, index))
                self.assertTrue(np.all(np.isfinite(frames[index].F)), (seed, index))
                self.assertLess(frames[index].orthogonality_defect(), 1e-8)


if __name__ == "__main__":
    unittest.main()
