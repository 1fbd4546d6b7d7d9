"""
Mam-App network: stem -> flatten -> VisionMamba blocks -> LN -> GAP -> FC
"""
from __future__ import annotations

from collections import OrderedDict
from typing import Dict, List

import numpy as np

from models.config import MamAppConfig
from models.ssm import VisionMambaBlock
from nn import functional as F
from nn.layers import BatchNorm2d, Conv2d, LayerNorm, Linear, Module, count_parameters, module_parameter_counts
from nn.tensor import Tensor
from utils.errors import DimensionError
from utils.validators import validate_model_config


class StemStage(Module):
    """Conv -> BN -> GELU"""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, padding: int,
                 rng: np.random.Generator, momentum: float, eps: float):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel, rng, stride=stride, padding=padding)
        self.bn = BatchNorm2d(out_channels, momentum=momentum, eps=eps)

    def forward(self, x: Tensor) -> Tensor:
        return F.gelu(self.bn(self.conv(x)))


class MamAppModel(Module):
    """
    Parameter-efficient Mamba image classifier.
    forward() returns pre-softmax logits; softmax is applied at prediction or loss time.
    """

    def __init__(self, config: MamAppConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        c1, c2 = config.stem_channels
        s1, s2 = config.stem_strides
        self.stem = [
            StemStage(config.input_size[2], c1, config.stem_kernel, s1, config.stem_padding, rng,
                      config.bn_momentum, config.bn_eps),
            StemStage(c1, c2, config.stem_kernel, s2, config.stem_padding, rng,
                      config.bn_momentum, config.bn_eps),
        ]
        self.blocks = [
            VisionMambaBlock(
                config.d_model, config.d_inner, config.d_state, config.dt_rank, config.conv1d_kernel, rng,
                ln_eps=config.ln_eps, dt_min=config.dt_min, dt_max=config.dt_max,
                scan_mode=config.scan_mode, scan_chunk=config.scan_chunk,
            )
            for _ in range(config.num_blocks)
        ]
        self.final_ln = LayerNorm(config.d_model, eps=config.ln_eps)
        self.head = Linear(config.d_model, config.num_classes, rng)

    def _check_input(self, images: Tensor) -> None:
        h, w, c = self.config.input_size
        if images.ndim != 4 or images.shape[1:] != (c, h, w):
            raise DimensionError(
                'forward', f"expected images [B,{c},{h},{w}], got {images.shape} (no implicit resize)"
            )

    def features(self, images: Tensor) -> Tensor:
        """Penultimate 32-d representation: post final LN, post GAP, pre FC."""
        self._check_input(images)
        x = images
        for stage in self.stem:
            x = stage(x)
        tokens = F.flatten_transpose(x)
        for block in self.blocks:
            tokens = block(tokens)
        return F.global_avg_pool(self.final_ln(tokens))

    def forward(self, images: Tensor) -> Tensor:
        return self.head(self.features(images))


def build(config: MamAppConfig, seed: int = None) -> MamAppModel:
    """Deterministically initialize a model; the seed defaults to config.seed."""
    validate_model_config(config)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    return MamAppModel(config, rng)


def forward(model: MamAppModel, images: Tensor, mode: str = 'eval') -> Tensor:
    if mode not in ('train', 'eval'):
        raise ValueError(f"mode must be 'train' or 'eval', got '{mode}'")
    model.train(mode == 'train')
    return model(images)


def extract_features(model: MamAppModel, images: Tensor) -> Tensor:
    model.eval()
    return model.features(images)


def predict_proba(model: MamAppModel, images: Tensor) -> np.ndarray:
    model.eval()
    return F.softmax(model(images), axis=-1).data


def count_params(model: MamAppModel) -> Dict[str, object]:
    """Total trainable scalars with per-module and per-block-component breakdowns."""
    per_module = module_parameter_counts(model, depth=1)
    per_stage: 'OrderedDict[str, int]' = module_parameter_counts(model, depth=2)
    block_components: 'OrderedDict[str, int]' = OrderedDict()
    for name, p in model.named_parameters():
        parts = name.split('.')
        if parts[0] == 'blocks':
            key = '.'.join(parts[2:4]) if parts[2] == 'mixer' else parts[2]
            block_components[key] = block_components.get(key, 0) + int(p.data.size)
    return {
        'total': count_parameters(model),
        'per_module': dict(per_module),
        'per_stage': dict(per_stage),
        'per_block_component': dict(block_components),
    }


def parameter_names(model: MamAppModel) -> List[str]:
    return [name for name, _ in model.named_parameters()]
