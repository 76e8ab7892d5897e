import pytest
import sys
import os

import numpy as np
import torch

# Add the app directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app.models.bezier import BezierCurve, derivative_curve, evaluate_positions, sample_times
from app.models.decoder import MotionDecoder, TrajectoryBasis, yaw_from_velocity_tensor
from app.models.scene_model import AnchorPose, to_global
from app.services.forecast_service import prediction_to_dict
from app.utils.errors import ConfigurationError

DOUBLE = torch.float64


def make_decoder(parameterization="bezier", modes=3, degree=3, horizon=6):
    return MotionDecoder(8, modes, TrajectoryBasis(parameterization, degree, horizon, 0.1)).to(DOUBLE)


class TestTrajectoryBasis:
    """Position and velocity maps of each parameterization"""

    def test_bezier_matrices_match_curve_math(self):
        basis = TrajectoryBasis("bezier", 5, 30, 0.1)
        control = np.random.default_rng(0).normal(size=(6, 2))
        curve = BezierCurve(control, tau_max=3.0)
        tau = sample_times(30) * 3.0
        np.testing.assert_allclose(basis.position_matrix @ control, evaluate_positions(curve, tau), atol=1e-12)
        np.testing.assert_allclose(basis.velocity_matrix @ control,
                                   evaluate_positions(derivative_curve(curve), tau), atol=1e-12)

    def test_raw_velocities_start_from_the_origin(self):
        basis = TrajectoryBasis("raw", 5, 4, 0.5)
        offsets = np.array([[1.0, 0.0], [2.0, 0.0], [4.0, 0.0], [7.0, 0.0]])
        np.testing.assert_allclose(basis.velocity_matrix @ offsets, [[2.0, 0], [2.0, 0], [4.0, 0], [6.0, 0]])
        assert basis.num_coeffs == 4

    def test_monomial_velocity_is_time_derivative(self):
        basis = TrajectoryBasis("monomial", 2, 10, 0.1)
        coeffs = np.array([[0.0, 0.0], [3.0, 0.0], [1.0, 0.0]])
        t = sample_times(10)
        np.testing.assert_allclose((basis.velocity_matrix @ coeffs)[:, 0], (3.0 + 2.0 * t) / 1.0, atol=1e-12)

    def test_unknown_parameterization(self):
        with pytest.raises(ConfigurationError):
            TrajectoryBasis("spline", 5, 30, 0.1)


class TestYawTensor:
    """Differentiable tangent yaws"""

    def test_matches_carry_forward_rule(self):
        velocity = torch.tensor([[0.01, 0.0], [0.0, 2.0], [0.0, 0.0], [3.0, 4.0]], dtype=DOUBLE)
        expected = torch.tensor([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.6, 0.8]], dtype=DOUBLE)
        torch.testing.assert_close(yaw_from_velocity_tensor(velocity), expected)

    def test_outputs_are_unit_vectors(self):
        yaws = yaw_from_velocity_tensor(torch.randn(4, 3, 10, 2, dtype=DOUBLE))
        torch.testing.assert_close(yaws.norm(dim=-1), torch.ones(4, 3, 10, dtype=DOUBLE))


class TestMotionDecoder:
    """Multimodal heads and global restoration"""

    def setup_method(self):
        self.decoder = make_decoder()
        self.tokens = torch.randn(4, 8, dtype=DOUBLE)
        self.anchors = [AnchorPose(np.array([float(i), 2.0]), np.array([np.cos(i), np.sin(i)])) for i in range(4)]

    def test_scores_are_a_distribution(self):
        out = self.decoder(self.tokens)
        assert out["scores"].shape == (4, 3)
        torch.testing.assert_close(out["scores"].sum(dim=-1), torch.ones(4, dtype=DOUBLE))
        assert bool((out["scores"] >= 0).all())

    def test_bias_only_heads_give_identical_straight_lines(self):
        line = torch.tensor([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]], dtype=DOUBLE).flatten()
        with torch.no_grad():
            for head in self.decoder.regression_heads:
                head.layers[-1].weight.zero_()
                head.layers[-1].bias.copy_(line)
        positions = self.decoder(self.tokens)["positions"]
        torch.testing.assert_close(positions[:, 0], positions[:, 2])
        torch.testing.assert_close(positions[..., 1], torch.zeros_like(positions[..., 1]))

    def test_decode_all_matches_per_agent_decode(self):
        batched = self.decoder.decode_all(self.tokens, self.anchors, list("abcd"), "s")
        assert len(batched) == 4
        for i, agent in enumerate(batched.agents):
            single = self.decoder.decode_agent(self.tokens[i], self.anchors[i], agent.agent_id)
            np.testing.assert_allclose(single.positions, agent.positions, atol=1e-12)
            np.testing.assert_allclose(single.scores, agent.scores, atol=1e-12)

    def test_global_positions_follow_the_anchor(self):
        prediction = self.decoder.decode_all(self.tokens, self.anchors, list("abcd"), "s")
        basis = self.decoder.basis.position_matrix
        for agent, anchor in zip(prediction.agents, self.anchors):
            for k in range(3):
                # affine invariance: transform control points first, then evaluate
                expected = basis @ to_global(agent.control_points[k], anchor)
                np.testing.assert_allclose(agent.positions[k], expected, atol=1e-9)
            assert agent.positions.shape == (3, 6, 2)
            assert agent.modes[0].control_points.shape == (4, 2)

    def test_prediction_record_lists_every_mode(self):
        prediction = self.decoder.decode_all(self.tokens, self.anchors, list("abcd"), "s")
        record = prediction_to_dict(prediction)
        assert [a["id"] for a in record["agents"]] == list("abcd")
        for agent, entry in zip(prediction.agents, record["agents"]):
            assert len(entry["modes"]) == 3
            for mode, written in zip(agent.modes, entry["modes"]):
                assert written["score"] == mode.score
                np.testing.assert_array_equal(written["control_points"], mode.control_points)
            assert sum(m["score"] for m in entry["modes"]) == pytest.approx(1.0)
