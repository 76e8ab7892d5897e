import pytest
import sys
import os
from dataclasses import replace

import numpy as np
import torch
from torch.autograd import gradcheck
from torch.func import functional_call

# Add the app directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app.models.encoders import ActorEncoder, MapEncoder, RelPoseEncoder
from app.models.forecasting_model import SimplForecastingModel, prepare_scene
from app.models.sft import SftConfig, SftLayer, SymmetricFusionTransformer
from app.utils.errors import ConfigurationError, MalformedSceneError, ShapeError
from factories import random_rigid, simple_scene, synthetic_scenes, tiny_config

DOUBLE = torch.float64


class TestEncoders:
    """Actor, map and relative pose tokenizers"""

    def test_actor_encoder_shapes(self):
        encoder = ActorEncoder(16).to(DOUBLE)
        assert encoder(torch.randn(3, 20, 3, dtype=DOUBLE)).shape == (3, 16)
        assert encoder(torch.randn(20, 3, dtype=DOUBLE)).shape == (16,)

    def test_map_encoder_ignores_padded_points(self):
        encoder = MapEncoder(16).to(DOUBLE)
        points = torch.randn(1, 4, 4, dtype=DOUBLE)
        mask = torch.tensor([[True, True, True, False]])
        padded = points.clone()
        padded[0, 3] = 1e3
        torch.testing.assert_close(encoder(points, mask), encoder(padded, mask))
        torch.testing.assert_close(encoder(points[0, :3]), encoder(points, mask)[0])

    def test_map_encoder_needs_two_points(self):
        with pytest.raises(MalformedSceneError):
            MapEncoder(16).to(DOUBLE)(torch.randn(1, 4, dtype=DOUBLE))

    def test_rpe_encoder_shape_check(self):
        encoder = RelPoseEncoder(8).to(DOUBLE)
        assert encoder(torch.randn(3, 3, 5, dtype=DOUBLE)).shape == (3, 3, 8)
        with pytest.raises(ShapeError):
            encoder(torch.randn(3, 3, 4, dtype=DOUBLE))


class TestSymmetricFusion:
    """Context construction and the fusion stack"""

    def setup_method(self):
        self.layer = SftLayer(8, 2, 16).to(DOUBLE)
        self.tokens = torch.randn(4, 8, dtype=DOUBLE)
        self.rpe = torch.randn(4, 4, 8, dtype=DOUBLE)

    def test_context_matches_pairwise_loop(self):
        context = self.layer.build_context(self.tokens, self.rpe)
        for j in range(4):
            for i in range(4):
                triple = torch.cat([self.tokens[i], self.tokens[j], self.rpe[j, i]])
                torch.testing.assert_close(context[j, i], self.layer.context_mlp(triple))

    def test_context_rejects_mismatched_rpe(self):
        with pytest.raises(ShapeError):
            self.layer.build_context(self.tokens, self.rpe[:3, :3])

    def test_layer_is_permutation_equivariant(self):
        perm = torch.tensor([2, 0, 3, 1])
        tokens, rpe = self.layer(self.tokens, self.rpe)
        tokens_p, rpe_p = self.layer(self.tokens[perm], self.rpe[perm][:, perm])
        torch.testing.assert_close(tokens_p, tokens[perm])
        torch.testing.assert_close(rpe_p, rpe[perm][:, perm])

    def test_layer_updates_each_token_from_its_own_context_row(self):
        tokens, rpe = self.layer(self.tokens, self.rpe)
        changed = self.rpe.clone()
        changed[2] += torch.randn(4, 8, dtype=DOUBLE)
        tokens_c, rpe_c = self.layer(self.tokens, changed)
        keep = [0, 1, 3]
        torch.testing.assert_close(tokens_c[keep], tokens[keep], atol=1e-12, rtol=0)
        torch.testing.assert_close(rpe_c[keep], rpe[keep], atol=1e-12, rtol=0)
        assert not torch.allclose(tokens_c[2], tokens[2])

    def test_single_layer_stack_equals_one_layer_call(self):
        fusion = SymmetricFusionTransformer(SftConfig(layers=1, heads=2, embed_dim=8)).to(DOUBLE)
        torch.testing.assert_close(fusion(self.tokens, self.rpe), fusion.layers[0](self.tokens, self.rpe)[0])

    def test_final_layer_has_no_rpe_update(self):
        fusion = SymmetricFusionTransformer(SftConfig(layers=3, heads=2, embed_dim=8))
        assert [layer.rpe_mlp is None for layer in fusion.layers] == [False, False, True]
        frozen = SymmetricFusionTransformer(SftConfig(layers=2, heads=2, embed_dim=8, rpe_update=False))
        assert all(layer.rpe_mlp is None for layer in frozen.layers)

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError):
            SftConfig(layers=0)
        with pytest.raises(ConfigurationError):
            SftConfig(heads=3, embed_dim=8)

    def test_layer_gradients_match_finite_differences(self):
        tokens = self.tokens[:3].clone().requires_grad_(True)
        rpe = self.rpe[:3, :3].clone().requires_grad_(True)
        assert gradcheck(lambda t, r: self.layer(t, r), (tokens, rpe))


class TestFullModel:
    """Viewpoint invariance and gradients of the assembled network"""

    def setup_method(self):
        self.config = tiny_config()
        self.model = SimplForecastingModel(self.config)
        self.model.eval()

    def test_fused_tokens_are_viewpoint_invariant(self):
        rng = np.random.default_rng(0)
        for scene in synthetic_scenes(5, seed=11):
            with torch.no_grad():
                reference = self.model.fuse(self.model.prepare(scene))
                predicted = self.model.predict(scene)
            for _ in range(4):
                rotation, translation = random_rigid(rng)
                moved = scene.transformed(rotation, translation)
                with torch.no_grad():
                    fused = self.model.fuse(self.model.prepare(moved))
                torch.testing.assert_close(fused, reference, atol=1e-9, rtol=0)

                rot = np.array([[np.cos(rotation), -np.sin(rotation)], [np.sin(rotation), np.cos(rotation)]])
                for before, after in zip(predicted.agents, self.model.predict(moved).agents):
                    np.testing.assert_allclose(after.positions, before.positions @ rot.T + translation, atol=1e-6)
                    np.testing.assert_allclose(after.yaws, before.yaws @ rot.T, atol=1e-6)

    def test_target_flags_do_not_change_outputs(self):
        scene = simple_scene()
        first = self.model.predict(scene)
        second = self.model.predict(scene.with_targets(["a2"]))
        for a, b in zip(first.agents, second.agents):
            np.testing.assert_array_equal(a.positions, b.positions)

    def test_scene_without_map_elements(self):
        scene = simple_scene()
        bare = replace(scene, map_elements=())
        prediction = self.model.predict(bare)
        assert len(prediction) == 3
        assert prediction.agents[0].positions.shape == (2, self.config.horizon, 2)

    def test_lone_agent_without_map(self):
        scene = simple_scene()
        lone = replace(scene, agents=scene.agents[:1], map_elements=())
        with torch.no_grad():
            fused = self.model.fuse(self.model.prepare(lone))
        assert fused.shape == (1, self.config.embed_dim)
        assert bool(torch.isfinite(fused).all())
        assert len(self.model.predict(lone)) == 1

    def test_input_gradients_match_finite_differences(self):
        inputs = prepare_scene(simple_scene(), DOUBLE)
        actor = inputs.actor_features[:2].clone().requires_grad_(True)
        rel = inputs.rel_pose[:2, :2].clone().requires_grad_(True)

        def run(actor_features, rel_pose):
            tokens = self.model.actor_encoder(actor_features)
            fused = self.model.fusion(tokens, self.model.rpe_encoder(rel_pose))
            return self.model.decoder(fused)["positions"]

        assert gradcheck(run, (actor, rel))

    def test_parameter_gradients_match_finite_differences(self):
        inputs = prepare_scene(simple_scene(), DOUBLE)
        names = ["fusion.layers.0.context_mlp.linear.weight", "decoder.classification_head.layers.0.bias",
                 "actor_encoder.out.bias", "map_encoder.head.linear.bias"]
        params = dict(self.model.named_parameters())
        leaves = tuple(params[name].detach().clone().requires_grad_(True) for name in names)

        def run(*values):
            out = functional_call(self.model, dict(zip(names, values)), (inputs,))
            return out["positions"].sum() + out["scores"][:, 0].sum()

        assert gradcheck(run, leaves)
