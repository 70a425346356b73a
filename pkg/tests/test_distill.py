import os
import sys
import unittest

import numpy as np

# Add the project root to sys.path so we can import condensegan_app
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from condensegan_app.core.ops import l1_loss
from condensegan_app.dataio import encode_checkpoint, gen_synthetic_pairs, stack_batch
from condensegan_app.distill import DistillConfig, stage2_finetune
from condensegan_app.errors import ConfigurationError
from condensegan_app.hingeprune import HingeMethod, HingeReport, apply_pruning, build_pruning_plan
from condensegan_app.netgraph import build_unet, forward

from tests.test_trainer import tiny_discriminator


def pruned_student(teacher):
    hinges = [HingeReport(0, 4, 2, HingeMethod.MANUAL), HingeReport(2, 4, 3, HingeMethod.MANUAL)]
    return apply_pruning(teacher, build_pruning_plan(teacher, hinges))


class TestStageTwo(unittest.TestCase):

    def setUp(self):
        self.teacher = build_unet(4, 2, 8, 16, seed=5)
        self.discriminator = tiny_discriminator()
        self.dataset = gen_synthetic_pairs(11, 4, 16, 2)

    def test_self_distillation_is_a_fixed_point(self):
        config = DistillConfig(weight_gt_l1=0.0, weight_teacher_l1=1.0, weight_gan=0.0, epochs=2, batch_size=2)
        teacher_before = {i: w.data.copy() for i, w in self.teacher.weights.items()}
        result = stage2_finetune(self.teacher.copy(), self.teacher, self.discriminator, self.dataset, config)
        student = result.checkpoint.graphs["generator"]
        for layer_id, weight in self.teacher.weights.items():
            np.testing.assert_array_equal(student.weights[layer_id].data, weight.data)
            np.testing.assert_array_equal(weight.data, teacher_before[layer_id])
        self.assertTrue(all(r.teacher_l1 == 0.0 for r in result.log.records))

    def test_topology_mismatch(self):
        other = build_unet(4, 3, 8, 16)
        with self.assertRaises(ConfigurationError):
            stage2_finetune(other, self.teacher, self.discriminator, self.dataset, DistillConfig())

    def test_all_zero_weights_rejected(self):
        config = DistillConfig(weight_gt_l1=0.0, weight_teacher_l1=0.0, weight_gan=0.0)
        with self.assertRaises(ConfigurationError):
            stage2_finetune(self.teacher, self.teacher, self.discriminator, self.dataset, config)

    def test_empty_dataset(self):
        with self.assertRaises(ConfigurationError):
            stage2_finetune(self.teacher, self.teacher, self.discriminator, [], DistillConfig())

    def test_same_seed_same_bytes(self):
        student = pruned_student(self.teacher)
        config = DistillConfig(epochs=1, batch_size=2)
        first = stage2_finetune(student, self.teacher, self.discriminator, self.dataset, config)
        second = stage2_finetune(student, self.teacher, self.discriminator, self.dataset, config)
        self.assertEqual(encode_checkpoint(first.checkpoint), encode_checkpoint(second.checkpoint))
        self.assertEqual(first.checkpoint.metadata["stage"], "2")

    def test_loss_recomposes_from_parts(self):
        student = pruned_student(self.teacher)
        config = DistillConfig(weight_gt_l1=2.0, weight_teacher_l1=3.0, weight_gan=0.5, epochs=1, batch_size=2)
        result = stage2_finetune(student, self.teacher, self.discriminator, self.dataset, config)
        for record in result.log.records:
            loss = record.loss
            expected = 2.0 * loss.l1 + 3.0 * record.teacher_l1 + 0.5 * loss.gan_g
            # relative tolerance
            self.assertAlmostEqual(loss.total_g, expected, delta=1e-6 * abs(expected))
            self.assertEqual(loss.penal, 0.0)

    def test_ground_truth_only_does_not_increase_loss(self):
        student = pruned_student(self.teacher)
        config = DistillConfig(weight_gt_l1=1.0, weight_teacher_l1=0.0, weight_gan=0.0, epochs=10, batch_size=4)
        result = stage2_finetune(student, self.teacher, self.discriminator, self.dataset, config)
        losses = [record.loss.l1 for record in result.log.records]
        self.assertEqual(len(losses), 10)
        self.assertLessEqual(losses[-1], losses[0])
        masks, images = stack_batch(self.dataset)
        tuned = result.checkpoint.graphs["generator"]
        before = l1_loss(forward(student, masks, record_gradients=False), images).item()
        after = l1_loss(forward(tuned, masks, record_gradients=False), images).item()
        self.assertLess(after, before)

    def test_discriminator_untouched_without_gan_term(self):
        config = DistillConfig(weight_gan=0.0, epochs=1, batch_size=2)
        result = stage2_finetune(pruned_student(self.teacher), self.teacher, self.discriminator, self.dataset, config)
        trained = result.checkpoint.graphs["discriminator"]
        for layer_id, weight in self.discriminator.weights.items():
            np.testing.assert_array_equal(trained.weights[layer_id].data, weight.data)
        self.assertTrue(all(r.loss.gan_d == 0.0 for r in result.log.records))


if __name__ == '__main__':
    unittest.main()
