"""Mini-batch training loop.

Scenes are prepared once, shuffled every epoch with a seeded generator and
processed one forward pass per scene; the per-scene outputs of a batch are
concatenated so the loss averages over every agent of the batch.
"""
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import torch
from loguru import logger
from torch.optim.lr_scheduler import MultiStepLR
from tqdm import tqdm

from app.config import TrainingConfig
from app.data.scene import Scene
from app.models.checkpoint import save_checkpoint
from app.models.forecasting_model import SceneTensors, SimplForecastingModel
from app.models.losses import LossBreakdown, total_loss
from app.models.nn_core import adam_step, backward, build_optimizer, seed_everything
from app.services.evaluation_service import EvaluationService
from app.utils.errors import MalformedSceneError, NumericFailure
from app.utils.report_writer import write_csv

LOSS_KEYS = ("total", "reg_pos", "reg_yaw", "cls")


def _concat_outputs(outputs: Sequence[Dict[str, torch.Tensor]]) -> Dict[str, torch.Tensor]:
    return {key: torch.cat([out[key] for out in outputs], dim=0) for key in outputs[0]}


class TrainingService:
    """Trains a forecasting model from a config"""

    def __init__(self, config: TrainingConfig):
        self.config = config
        seed_everything(config.seed)
        self.model = SimplForecastingModel(config)
        self.optimizer = build_optimizer(self.model.parameters(), config.lr)
        self.scheduler = MultiStepLR(self.optimizer, milestones=[config.lr_decay_epoch], gamma=config.lr_decay_factor)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.history: List[Dict[str, float]] = []

    def prepare(self, scenes: Sequence[Scene]) -> List[SceneTensors]:
        prepared = []
        for scene in scenes:
            if not scene.has_futures:
                raise MalformedSceneError(f"training scene {scene.scenario_id} has agents without a future")
            if scene.history_len != self.config.history or scene.future_len != self.config.horizon:
                raise MalformedSceneError(
                    f"scene {scene.scenario_id} has H={scene.history_len}, T={scene.future_len}; "
                    f"config expects H={self.config.history}, T={self.config.horizon}"
                )
            prepared.append(self.model.prepare(scene))
        return prepared

    def batch_loss(self, batch: Sequence[SceneTensors]) -> LossBreakdown:
        """Forward every scene of the batch and score all of their agents at once"""
        outputs = [self.model(inputs) for inputs in batch]
        future = torch.cat([inputs.future_local for inputs in batch], dim=0)
        breakdown = total_loss(_concat_outputs(outputs), future, self.config.dt, omega=self.config.omega,
                               margin=self.config.margin, use_yaw_loss=self.config.yaw_loss)
        if not breakdown.is_finite:
            raise NumericFailure(f"non-finite loss in scene {self._offending_scene(batch, outputs)}")
        return breakdown

    def _offending_scene(self, batch: Sequence[SceneTensors], outputs: Sequence[Dict[str, torch.Tensor]]) -> str:
        with torch.no_grad():
            for inputs, out in zip(batch, outputs):
                single = total_loss(out, inputs.future_local, self.config.dt, omega=self.config.omega,
                                    margin=self.config.margin, use_yaw_loss=self.config.yaw_loss)
                if not single.is_finite:
                    return inputs.scenario_id
        return batch[0].scenario_id

    def step(self, batch: Sequence[SceneTensors]) -> LossBreakdown:
        """One Adam update on a batch"""
        self.optimizer.zero_grad(set_to_none=True)
        breakdown = self.batch_loss(batch)
        backward(breakdown.total)
        adam_step(self.optimizer)
        return breakdown

    def run_epoch(self, prepared: Sequence[SceneTensors]) -> Dict[str, float]:
        self.model.train()
        order = torch.randperm(len(prepared), generator=self.generator).tolist()
        sums = dict.fromkeys(LOSS_KEYS, 0.0)
        batches = 0
        for start in range(0, len(order), self.config.batch_size):
            batch = [prepared[i] for i in order[start:start + self.config.batch_size]]
            losses = self.step(batch).as_floats()
            for key in LOSS_KEYS:
                sums[key] += losses[key]
            batches += 1
        return {key: value / max(batches, 1) for key, value in sums.items()}

    def validate(self, scenes: Sequence[Scene]) -> Dict[str, float]:
        """Metrics over every agent with a future"""
        predictions = [self.model.predict(scene) for scene in scenes]
        _, report = EvaluationService(targets_only=False).score(predictions, scenes)
        values = report.as_dict()
        return {f"val_{key}": values[key] for key in
                ("min_ade", "min_fde", "miss_rate", "brier_min_fde", "min_aye", "min_fye")}

    def train(self, scenes: Sequence[Scene], val_scenes: Optional[Sequence[Scene]] = None,
              metrics_path: Union[str, Path, None] = None,
              checkpoint_path: Union[str, Path, None] = None) -> SimplForecastingModel:
        if not scenes:
            raise MalformedSceneError("training needs at least one scene")
        prepared = self.prepare(scenes)
        logger.info(f"training on {len(prepared)} scenes for {self.config.epochs} epochs")

        progress = tqdm(range(1, self.config.epochs + 1), desc="train", unit="epoch", disable=None)
        for epoch in progress:
            lr = self.optimizer.param_groups[0]["lr"]
            record = {"epoch": epoch, "lr": lr, **self.run_epoch(prepared)}
            self.scheduler.step()
            if val_scenes:
                record.update(self.validate(val_scenes))
            self.history.append(record)
            progress.set_postfix(loss=f"{record['total']:.4f}")
            logger.info(" ".join(f"{key}={value:.6g}" if isinstance(value, float) else f"{key}={value}"
                                 for key, value in record.items()))

        if metrics_path is not None:
            write_csv(self.history, metrics_path)
        if checkpoint_path is not None:
            save_checkpoint(self.model, checkpoint_path)
            logger.info(f"checkpoint written to {checkpoint_path}")
        return self.model
