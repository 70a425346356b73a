import os
import sys
import unittest

import numpy as np

# Add the project root to sys.path so we can import condensegan_app
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from condensegan_app.core.tensor import Tensor
from condensegan_app.errors import ConfigurationError, PlanError, StructuralError
from condensegan_app.hingeprune import (
    HingeMethod,
    HingeReport,
    MagnitudeCurve,
    apply_pruning,
    build_pruning_plan,
    curve_rows,
    detect_hinge,
    detect_hinges,
    hinge_rows,
    identity_plan,
    magnitude_curve,
    manual_hinge,
    mask_graph,
    validate_plan,
)
from condensegan_app.netgraph import build_unet, count_macs, forward


def curve_of(values, layer_id=0):
    values = np.asarray(values, dtype=np.float64)
    order = np.lexsort((np.arange(values.size), -values))
    return MagnitudeCurve(layer_id, values[order], order)


def random_plan(graph, rng):
    hinges = []
    for layer_id in graph.prunable_layer_ids():
        out_ch = graph.layer(layer_id).out_ch
        keep = int(rng.integers(1, out_ch + 1))
        hinges.append(HingeReport(layer_id, out_ch, keep, HingeMethod.MANUAL))
    return build_pruning_plan(graph, hinges)


class TestHingeDetection(unittest.TestCase):

    def test_magnitude_curve_sorts_descending(self):
        curve = curve_of([1.0, 3.0, 2.0])
        np.testing.assert_array_equal(curve.sorted_gamma, [3.0, 2.0, 1.0])
        np.testing.assert_array_equal(curve.channel_ids, [1, 2, 0])
        np.testing.assert_array_equal(curve_of([2.0, 2.0, 2.0]).channel_ids, [0, 1, 2])

    def test_magnitude_curve_from_graph_is_permutation(self):
        graph = build_unet(4, 2, 8, 8, seed=1)
        curve = magnitude_curve(graph, 1)
        self.assertEqual(sorted(curve.channel_ids.tolist()), list(range(graph.layer(1).out_ch)))
        self.assertTrue((np.diff(curve.sorted_gamma) <= 0).all())

    def test_examples(self):
        report = detect_hinge(curve_of([10, 9.5, 9, 8.8, 0.01, 0.009, 0.005]), 10)
        self.assertEqual(report.keep_count, 4)
        self.assertAlmostEqual(report.drop_ratio, 880.0)
        self.assertTrue(report.pruned)
        flat = detect_hinge(curve_of([5, 5, 5, 5]))
        self.assertEqual(flat.keep_count, 4)
        self.assertIsNone(flat.drop_ratio)
        self.assertFalse(flat.pruned)
        self.assertEqual(detect_hinge(curve_of([8, 7, 6, 5, 4]), 10).keep_count, 5)

    def test_exact_zero_tail_uses_floor(self):
        report = detect_hinge(curve_of([4.0, 3.0, 0.0, 0.0]))
        self.assertEqual(report.keep_count, 2)

    def test_ratio_must_exceed_one(self):
        with self.assertRaises(ConfigurationError):
            detect_hinge(curve_of([2.0, 1.0]), 1.0)

    def test_planted_bimodal_curves_recovered(self):
        rng = np.random.default_rng(1234)
        for _ in range(1000):
            n = int(rng.integers(2, 65))
            split = int(rng.integers(1, n))
            head = rng.uniform(1.0, 10.0, split)
            tail = rng.uniform(1.0, 10.0, n - split) * 1e-4
            values = rng.permutation(np.concatenate([head, tail]))
            report = detect_hinge(curve_of(values))
            self.assertEqual(report.keep_count, split)
            self.assertGreaterEqual(report.keep_count, 1)

    def test_flat_curves_have_no_hinge(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            n = int(rng.integers(1, 65))
            report = detect_hinge(curve_of(rng.uniform(1.0, 2.0, n)))
            self.assertEqual(report.keep_count, n)

    def test_manual_hinge(self):
        curve = curve_of([10, 9, 1, 0.5])
        report = manual_hinge(curve, 2)
        self.assertEqual(report.method, HingeMethod.MANUAL)
        self.assertEqual(report.keep_count, 2)
        self.assertAlmostEqual(report.drop_ratio, 9.0)
        with self.assertRaises(PlanError):
            manual_hinge(curve, 0)

    def test_detect_hinges_manual_override(self):
        graph = build_unet(4, 2, 8, 8)
        curves, hinges = detect_hinges(graph, manual={1: 3})
        by_layer = {h.layer_id: h for h in hinges}
        self.assertEqual(by_layer[1].keep_count, 3)
        self.assertEqual(by_layer[1].method, HingeMethod.MANUAL)
        self.assertEqual([c.layer_id for c in curves], graph.prunable_layer_ids())
        with self.assertRaises(ConfigurationError):
            detect_hinges(graph, manual={3: 1})


class TestPruningPlan(unittest.TestCase):

    def setUp(self):
        self.graph = build_unet(4, 3, 16, 16, seed=8)

    def test_identity_plan(self):
        plan = build_pruning_plan(self.graph, [])
        self.assertTrue(plan.is_identity(self.graph))
        pruned = apply_pruning(self.graph, plan)
        for layer_id in self.graph.weights:
            np.testing.assert_array_equal(pruned.weights[layer_id].data, self.graph.weights[layer_id].data)
        again = apply_pruning(pruned, identity_plan(pruned))
        self.assertEqual(again.layers, pruned.layers)

    def test_encoder_keep_set_propagates_through_skip(self):
        curve = magnitude_curve(self.graph, 0)
        plan = build_pruning_plan(self.graph, [HingeReport(0, 4, 3, HingeMethod.MANUAL)])
        kept = np.sort(curve.channel_ids[:3])
        np.testing.assert_array_equal(plan.output_keep[0], kept)
        np.testing.assert_array_equal(plan.input_keep[1], kept)
        # layer 5 reads (layer 4, layer 0): four channels of layer 4 then layer 0's survivors
        np.testing.assert_array_equal(plan.input_keep[5], np.concatenate([np.arange(4), 4 + kept]))

    def test_decoder_only_pruning_leaves_encoder(self):
        plan = build_pruning_plan(self.graph, [HingeReport(4, 4, 2, HingeMethod.MANUAL)])
        pruned = apply_pruning(self.graph, plan)
        for layer_id in (0, 1, 2):
            np.testing.assert_array_equal(pruned.weights[layer_id].data, self.graph.weights[layer_id].data)
        self.assertEqual(pruned.layer(5).in_ch, 2 + 4)

    def test_output_layer_never_pruned(self):
        with self.assertRaises(PlanError):
            build_pruning_plan(self.graph, [HingeReport(5, 3, 2, HingeMethod.MANUAL)])

    def test_inconsistent_plan_names_edge(self):
        plan = build_pruning_plan(self.graph, [HingeReport(0, 4, 2, HingeMethod.MANUAL)])
        plan.input_keep[1] = np.setdiff1d(np.arange(4), plan.output_keep[0])
        with self.assertRaises(StructuralError) as ctx:
            apply_pruning(self.graph, plan)
        self.assertEqual(ctx.exception.details["edge"], "0->1")

    def test_params_and_macs_shrink(self):
        plan = random_plan(self.graph, np.random.default_rng(0))
        pruned = apply_pruning(self.graph, plan)
        expected = sum(
            spec.kernel**2 * plan.input_keep[spec.id].size * plan.output_keep[spec.id].size
            for spec in self.graph.layers
        )
        self.assertEqual(count_macs(pruned, 16).total_params, expected)
        if not plan.is_identity(self.graph):
            self.assertLess(count_macs(pruned, 16).total_macs, count_macs(self.graph, 16).total_macs)
        validate_plan(self.graph, plan)


class TestMaskedEquivalence(unittest.TestCase):

    def test_pruned_forward_matches_masked_forward(self):
        rng = np.random.default_rng(2024)
        for trial in range(50):
            depth = int(rng.integers(2, 4))
            base = int(rng.integers(2, 7))
            size = 2**depth * int(rng.integers(1, 3))
            graph = build_unet(base, depth, base * 4, size, seed=trial)
            for layer_id, weight in graph.weights.items():
                weight.data = rng.standard_normal(weight.shape) * 0.3
            plan = random_plan(graph, rng)
            x = Tensor(rng.uniform(-1, 1, (2, 3, size, size)), dtype=np.float64)
            pruned_out = forward(apply_pruning(graph, plan), x, record_gradients=False)
            masked_out = forward(mask_graph(graph, plan), x, record_gradients=False)
            with self.subTest(trial=trial):
                self.assertLessEqual(float(np.abs(pruned_out.data - masked_out.data).max()), 1e-5)


class TestReports(unittest.TestCase):

    def test_rows(self):
        graph = build_unet(4, 2, 8, 8)
        curves, hinges = detect_hinges(graph, manual={0: 1})
        rows = curve_rows(curves, hinges)
        self.assertEqual(len(rows), sum(graph.layer(i).out_ch for i in graph.prunable_layer_ids()))
        layer0 = [row for row in rows if row["layer_id"] == 0]
        self.assertEqual([row["keep"] for row in layer0], [1, 0, 0, 0])
        self.assertEqual(hinge_rows(hinges)[0]["method"], "manual")


if __name__ == '__main__':
    unittest.main()
