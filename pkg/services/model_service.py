"""
Model service for building models and checkpoint round-trips
Coordinates between the model definition and the checkpoint repository
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from models.config import MamAppConfig
from models.mam_app import MamAppModel, build, count_params
from models.training import OptimizerState
from repositories.checkpoint_repository import CheckpointData, CheckpointRepositoryInterface
from utils.errors import CheckpointError, CheckpointShapeMismatch, ConfigError
from utils.run_logger import get_run_logger

logger = logging.getLogger(__name__)

OPTIMIZER_MOMENT_PREFIX = 'optimizer.m.'
OPTIMIZER_SECOND_MOMENT_PREFIX = 'optimizer.v.'


@dataclass
class LoadedCheckpoint:
    model: MamAppModel
    config: MamAppConfig
    state: Dict[str, Any] = field(default_factory=dict)
    optimizer: Optional[OptimizerState] = None


class ModelService:
    """
    Service class handling model construction and persistence
    """

    def __init__(self, checkpoint_repository: CheckpointRepositoryInterface):
        """
        Initialize the ModelService with a checkpoint repository.

        :param checkpoint_repository: Repository instance for checkpoint files
        """
        self.checkpoint_repository = checkpoint_repository

    def build(self, config: MamAppConfig, seed: Optional[int] = None) -> MamAppModel:
        return build(config, seed)

    def count_params(self, config: MamAppConfig) -> Dict[str, object]:
        return count_params(self.build(config))

    def save_checkpoint(self, model: MamAppModel, config: MamAppConfig, path: str,
                        state: Optional[Dict[str, Any]] = None,
                        optimizer: Optional[OptimizerState] = None) -> None:
        """
        Write parameters, buffers and the inline config; optimizer moments are appended when given.

        :param path: destination file, replaced atomically
        """
        tensors: 'OrderedDict[str, np.ndarray]' = OrderedDict(model.state_dict())
        state = dict(state or {})
        if optimizer is not None:
            for name, moment in optimizer.exp_avg.items():
                tensors[f"{OPTIMIZER_MOMENT_PREFIX}{name}"] = moment
            for name, moment in optimizer.exp_avg_sq.items():
                tensors[f"{OPTIMIZER_SECOND_MOMENT_PREFIX}{name}"] = moment
            state['optimizer'] = {
                'step': optimizer.step,
                'lr': optimizer.lr,
                'betas': list(optimizer.betas),
                'eps': optimizer.eps,
                'weight_decay': optimizer.weight_decay,
            }
        self.checkpoint_repository.save(path, CheckpointData(config=config.to_dict(), tensors=tensors, state=state))
        get_run_logger().log_checkpoint(path, 'save', epoch=state.get('epoch'))

    def load_checkpoint(self, path: str, expected_config: Optional[MamAppConfig] = None) -> LoadedCheckpoint:
        """
        Rebuild the model stored in ``path``.

        :param expected_config: when given, the model is built from it and every stored tensor must fit it
        :raises CheckpointShapeMismatch: a stored tensor disagrees with the config's shape
        """
        data = self.checkpoint_repository.load(path)
        try:
            stored_config = MamAppConfig.from_mapping(data.config)
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"{path}: config block does not describe a model: {e}")
        config = expected_config or stored_config

        try:
            model = build(config)
        except ConfigError as e:
            raise CheckpointError(f"{path}: stored config is invalid: {e}")

        expected = model.state_dict()
        model_tensors = {k: v for k, v in data.tensors.items() if not k.startswith('optimizer.')}
        for name, array in expected.items():
            if name not in model_tensors:
                raise CheckpointError(f"{path}: missing tensor '{name}'")
            if tuple(model_tensors[name].shape) != tuple(array.shape):
                raise CheckpointShapeMismatch(name, model_tensors[name].shape, array.shape)
        unexpected = sorted(set(model_tensors) - set(expected))
        if unexpected:
            raise CheckpointError(f"{path}: unexpected tensor '{unexpected[0]}' for this config")

        model.load_state_dict(model_tensors)
        model.eval()
        get_run_logger().log_checkpoint(path, 'load', epoch=data.state.get('epoch'))
        return LoadedCheckpoint(model=model, config=config, state=dict(data.state),
                                optimizer=self._restore_optimizer(data, model))

    def _restore_optimizer(self, data: CheckpointData, model: MamAppModel) -> Optional[OptimizerState]:
        settings = data.state.get('optimizer')
        if not settings:
            return None
        optimizer = OptimizerState(
            lr=float(settings['lr']),
            betas=tuple(settings['betas']),
            eps=float(settings['eps']),
            weight_decay=float(settings['weight_decay']),
            step=int(settings['step']),
        )
        for name, p in model.named_parameters():
            m = data.tensors.get(f"{OPTIMIZER_MOMENT_PREFIX}{name}")
            v = data.tensors.get(f"{OPTIMIZER_SECOND_MOMENT_PREFIX}{name}")
            if m is None or v is None:
                continue
            if m.shape != p.shape or v.shape != p.shape:
                raise CheckpointShapeMismatch(f"{OPTIMIZER_MOMENT_PREFIX}{name}", m.shape, p.shape)
            optimizer.exp_avg[name] = m.astype(p.data.dtype, copy=True)
            optimizer.exp_avg_sq[name] = v.astype(p.data.dtype, copy=True)
        return optimizer
