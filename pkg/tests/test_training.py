import pytest
import sys
import os
from dataclasses import replace

import numpy as np
import pandas as pd
import torch

# Add the app directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app.models.checkpoint import load_checkpoint, read_checkpoint
from app.models.decoder import yaw_from_velocity_tensor
from app.models.forecasting_model import prepare_scene
from app.models.losses import (
    classification_loss,
    ground_truth_yaws,
    position_loss,
    select_winner,
    total_loss,
    yaw_loss,
)
from app.models.nn_core import backward, gradient_store
from app.services.training_service import TrainingService
from app.utils.errors import MalformedSceneError, NumericFailure
from factories import simple_scene, synthetic_scenes, tiny_config

DOUBLE = torch.float64


def perfect_output(future, modes=2, winner=0):
    """Decoder-shaped output whose winning mode equals the ground truth"""
    positions = future[:, None].repeat(1, modes, 1, 1).clone()
    positions[:, [k for k in range(modes) if k != winner]] += 10.0
    scores = torch.zeros(future.shape[0], modes, dtype=DOUBLE)
    scores[:, winner] = 1.0
    velocities = torch.diff(torch.cat([torch.zeros_like(positions[..., :1, :]), positions], dim=-2), dim=-2) / 0.1
    return {"positions": positions, "scores": scores, "velocities": velocities,
            "yaws": yaw_from_velocity_tensor(velocities)}


class TestLosses:
    """Winner selection and the loss terms"""

    def test_winner_is_closest_endpoint_with_smallest_index_on_ties(self):
        future = torch.zeros(1, 3, 2, dtype=DOUBLE)
        positions = torch.zeros(1, 3, 3, 2, dtype=DOUBLE)
        positions[0, 0, -1] = torch.tensor([2.5, 0.0])
        positions[0, 1, -1] = torch.tensor([1.0, 0.0])
        positions[0, 2, -1] = torch.tensor([0.0, 1.0])
        assert select_winner(positions, future).tolist() == [1]

    def test_winner_ignores_scores(self):
        out = perfect_output(torch.randn(5, 6, 2, dtype=DOUBLE), modes=3)
        out["positions"] = out["positions"] + torch.randn_like(out["positions"])
        future = torch.randn(5, 6, 2, dtype=DOUBLE)
        reference = total_loss(out, future, 0.1).winners
        out["scores"] = torch.softmax(torch.randn(5, 3, dtype=DOUBLE), dim=-1) * 7.0
        assert total_loss(out, future, 0.1).winners.tolist() == reference.tolist()

    def test_position_loss_examples(self):
        gt = torch.zeros(1, 4, 2, dtype=DOUBLE)
        assert float(position_loss(gt.clone(), gt)) == 0.0
        offset = torch.full((1, 4, 2), 0.5, dtype=DOUBLE)
        assert float(position_loss(offset, gt)) == pytest.approx(0.125)
        far = torch.full((1, 4, 2), 3.0, dtype=DOUBLE)
        assert float(position_loss(far, gt)) == pytest.approx(2.5)

    def test_yaw_loss_bounds_and_examples(self):
        east = torch.tensor([[[1.0, 0.0]]], dtype=DOUBLE)
        assert float(yaw_loss(east, east)) == pytest.approx(0.0)
        assert float(yaw_loss(-east, east)) == pytest.approx(1.0)
        assert float(yaw_loss(torch.tensor([[[0.0, 1.0]]], dtype=DOUBLE), east)) == pytest.approx(0.5)

    def test_classification_loss_examples(self):
        scores = torch.tensor([[0.5, 0.5]], dtype=DOUBLE)
        assert float(classification_loss(scores, torch.tensor([0]), 0.2)) == pytest.approx(0.2)
        dominant = torch.tensor([[0.9, 0.05, 0.05]], dtype=DOUBLE)
        assert float(classification_loss(dominant, torch.tensor([0]), 0.2)) == 0.0
        assert float(classification_loss(torch.ones(3, 1, dtype=DOUBLE), torch.zeros(3, dtype=torch.long), 0.2)) == 0.0

    def test_classification_loss_matches_loop(self):
        scores = torch.softmax(torch.randn(6, 4, dtype=DOUBLE), dim=-1)
        winners = torch.randint(0, 4, (6,))
        expected = np.mean([
            np.mean([max(0.0, float(scores[a, k] + 0.2 - scores[a, winners[a]])) for k in range(4) if k != winners[a]])
            for a in range(6)
        ])
        assert float(classification_loss(scores, winners, 0.2)) == pytest.approx(expected, abs=1e-12)

    def test_perfect_prediction_has_zero_loss(self):
        future = torch.cumsum(torch.full((3, 6, 2), 0.8, dtype=DOUBLE), dim=1)
        breakdown = total_loss(perfect_output(future, modes=2), future, 0.1)
        assert float(breakdown.total) == pytest.approx(0.0, abs=1e-12)

    def test_breakdown_identity_and_omega(self):
        out = perfect_output(torch.randn(4, 6, 2, dtype=DOUBLE), modes=3)
        out["positions"] = out["positions"] + torch.randn_like(out["positions"])
        out["scores"] = torch.softmax(torch.randn(4, 3, dtype=DOUBLE), dim=-1)
        future = torch.randn(4, 6, 2, dtype=DOUBLE)
        b = total_loss(out, future, 0.1)
        assert float(b.total) == pytest.approx(0.8 * float(b.reg_pos + b.reg_yaw) + 0.2 * float(b.cls), abs=1e-12)
        only_reg = total_loss(out, future, 0.1, omega=1.0)
        assert float(only_reg.total) == pytest.approx(float(b.reg_pos + b.reg_yaw), abs=1e-12)
        no_yaw = total_loss(out, future, 0.1, use_yaw_loss=False)
        assert float(no_yaw.reg_yaw) == 0.0

    def test_ground_truth_yaws_start_at_the_origin(self):
        future = torch.tensor([[[0.0, 1.0], [0.0, 1.0], [1.0, 1.0]]], dtype=DOUBLE)
        expected = torch.tensor([[[0.0, 1.0], [0.0, 1.0], [1.0, 0.0]]], dtype=DOUBLE)
        torch.testing.assert_close(ground_truth_yaws(future, 0.1), expected)


class TestTrainingService:
    """The training loop end to end on tiny scenes"""

    def setup_method(self):
        self.scenes = synthetic_scenes(6, seed=3)

    def test_every_parameter_group_receives_gradient(self):
        service = TrainingService(tiny_config(modes=3))
        batch = service.prepare(self.scenes)
        breakdown = service.batch_loss(batch)
        backward(breakdown.total)
        grads = gradient_store(service.model)
        winners = set(breakdown.winners.tolist())
        for name, grad in grads.items():
            if name.startswith("decoder.regression_heads."):
                mode = int(name.split(".")[2])
                assert (float(grad.abs().sum()) > 0) == (mode in winners), name
            else:
                assert float(grad.abs().sum()) > 0, name

    def test_small_step_decreases_the_loss(self):
        service = TrainingService(tiny_config(lr=1e-5))
        batch = service.prepare(self.scenes[:1])
        before = float(service.batch_loss(batch).total)
        service.step(batch)
        after = float(service.batch_loss(batch).total)
        assert after < before

    def test_same_seed_gives_identical_checkpoints(self, tmp_path):
        config = tiny_config(epochs=2, batch_size=3)
        TrainingService(config).train(self.scenes, checkpoint_path=tmp_path / "a.ckpt")
        TrainingService(config).train(self.scenes, checkpoint_path=tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_zero_epochs_saves_the_initialization(self, tmp_path):
        service = TrainingService(tiny_config(epochs=0))
        initial = {k: v.clone() for k, v in service.model.state_dict().items()}
        service.train(self.scenes, checkpoint_path=tmp_path / "init.ckpt")
        _, tensors = read_checkpoint(tmp_path / "init.ckpt")
        for name, value in initial.items():
            np.testing.assert_array_equal(tensors[name], value.numpy())

    def test_learning_rate_schedule_and_metrics_log(self, tmp_path):
        config = tiny_config(epochs=3, lr_decay_epoch=2, lr_decay_factor=0.1)
        service = TrainingService(config)
        service.train(self.scenes[:4], val_scenes=self.scenes[4:], metrics_path=tmp_path / "metrics.csv")
        log = pd.read_csv(tmp_path / "metrics.csv")
        assert log["epoch"].tolist() == [1, 2, 3]
        np.testing.assert_allclose(log["lr"], [1e-3, 1e-3, 1e-4])
        assert {"total", "reg_pos", "reg_yaw", "cls", "val_min_fde", "val_min_aye"} <= set(log.columns)

    def test_training_round_trip_predictions(self, tmp_path):
        TrainingService(tiny_config(epochs=1)).train(self.scenes, checkpoint_path=tmp_path / "m.ckpt")
        model = load_checkpoint(tmp_path / "m.ckpt")
        first, second = model.predict(self.scenes[0]), model.predict(self.scenes[0])
        for a, b in zip(first.agents, second.agents):
            np.testing.assert_array_equal(a.positions, b.positions)

    def test_scenes_without_futures_are_rejected(self):
        scene = simple_scene()
        stripped = replace(scene, agents=tuple(replace(a, future=None) for a in scene.agents))
        with pytest.raises(MalformedSceneError):
            TrainingService(tiny_config()).prepare([stripped])

    def test_non_finite_loss_names_the_scene(self):
        service = TrainingService(tiny_config())
        batch = service.prepare(self.scenes[:2])
        batch[1].future_local[0, 0, 0] = float("nan")
        with pytest.raises(NumericFailure, match=batch[1].scenario_id):
            service.batch_loss(batch)

    def test_prepared_futures_are_local(self):
        inputs = prepare_scene(simple_scene(), DOUBLE)
        # agent a0 drives along +x at 8 m/s, so its local future runs along the local x axis
        torch.testing.assert_close(inputs.future_local[0, :, 1], torch.zeros(6, dtype=DOUBLE), atol=1e-12, rtol=0)
        torch.testing.assert_close(inputs.future_local[0, 0, 0], torch.tensor(0.8, dtype=DOUBLE))
