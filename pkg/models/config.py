"""
Model and training hyperparameters
A dataclass so it serializes into checkpoints and hashes deterministically
"""
import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

from dataclasses_json import dataclass_json


@dataclass_json
@dataclass
class MamAppConfig:
    """
    Every architectural and training hyperparameter of the classifier.
    Defaults reproduce the reference training setup (256x256 RGB input, 5 blocks, width 32).
    """
    input_size: Tuple[int, int, int] = (256, 256, 3)
    stem_channels: Tuple[int, int] = (16, 32)
    stem_kernel: int = 3
    stem_strides: Tuple[int, int] = (2, 2)
    stem_padding: int = 1
    num_blocks: int = 5
    d_model: int = 32
    d_inner: int = 32
    d_state: int = 16
    dt_rank: int = 2
    conv1d_kernel: int = 4
    num_classes: int = 4
    class_names: List[str] = field(default_factory=list)

    # SSM initialization and evaluation
    dt_min: float = 1e-3
    dt_max: float = 1e-1
    scan_mode: str = 'sequential'
    scan_chunk: int = 16

    # Normalization layers
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    ln_eps: float = 1e-5

    # Input normalization; None means plain [0, 1] scaling
    norm_mean: Optional[Tuple[float, float, float]] = None
    norm_std: Optional[Tuple[float, float, float]] = None

    # Optimization
    label_smoothing: float = 0.1
    lr: float = 1e-3
    weight_decay: float = 1e-5
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 1000
    seed: int = 42

    def __post_init__(self):
        # JSON round-trips turn tuples into lists
        for name in ('input_size', 'stem_channels', 'stem_strides', 'betas', 'norm_mean', 'norm_std'):
            value = getattr(self, name)
            if isinstance(value, list):
                setattr(self, name, tuple(value))
        self.class_names = list(self.class_names)

    @property
    def image_hw(self) -> Tuple[int, int]:
        return self.input_size[0], self.input_size[1]

    def stem_output_hw(self) -> Tuple[int, int]:
        """Spatial size after both stem convolutions."""
        h, w = self.image_hw
        for stride in self.stem_strides:
            h = (h + 2 * self.stem_padding - self.stem_kernel) // stride + 1
            w = (w + 2 * self.stem_padding - self.stem_kernel) // stride + 1
        return h, w

    def num_tokens(self) -> int:
        h, w = self.stem_output_hw()
        return h * w

    def with_overrides(self, **overrides: Any) -> 'MamAppConfig':
        return replace(self, **overrides)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode('utf-8')).hexdigest()[:16]

    @classmethod
    def from_mapping(cls, data: Dict[str, Any]) -> 'MamAppConfig':
        return cls.from_dict(data)


def small_config(image_size: int = 64, **overrides: Any) -> MamAppConfig:
    """Default architecture at a reduced input resolution (desk-scale runs)."""
    return MamAppConfig(input_size=(image_size, image_size, 3), **overrides)
