from typing import List, TYPE_CHECKING

from utils.errors import ConfigError

if TYPE_CHECKING:
    from models.config import MamAppConfig

SCAN_MODES = ('sequential', 'chunked')


class ConfigValidator:
    @staticmethod
    def validate_architecture(config: 'MamAppConfig') -> List[str]:
        errors = []

        if len(config.input_size) != 3 or config.input_size[2] != 3:
            errors.append(f"input_size must be (H, W, 3), got {config.input_size}")
        if len(config.stem_channels) != 2 or len(config.stem_strides) != 2:
            errors.append("stem_channels and stem_strides must each have two entries")
        elif config.d_model != config.stem_channels[1]:
            errors.append(f"d_model ({config.d_model}) must equal stem_channels[1] ({config.stem_channels[1]})")
        if config.num_classes < 2:
            errors.append(f"num_classes must be >= 2, got {config.num_classes}")
        if config.class_names and len(config.class_names) != config.num_classes:
            errors.append(f"class_names has {len(config.class_names)} entries but num_classes is {config.num_classes}")

        positive = ('stem_kernel', 'num_blocks', 'd_model', 'd_inner', 'd_state', 'dt_rank', 'conv1d_kernel',
                    'scan_chunk')
        for name in positive:
            if getattr(config, name) < 1:
                errors.append(f"{name} must be >= 1, got {getattr(config, name)}")
        if config.stem_padding < 0:
            errors.append(f"stem_padding must be >= 0, got {config.stem_padding}")

        if not errors:
            h, w = config.stem_output_hw()
            if h < 1 or w < 1:
                errors.append(f"input_size {config.input_size} is too small for the stem")

        if config.scan_mode not in SCAN_MODES:
            errors.append(f"scan_mode must be one of {SCAN_MODES}, got '{config.scan_mode}'")
        if not 0 < config.dt_min < config.dt_max:
            errors.append(f"dt range must satisfy 0 < dt_min < dt_max, got ({config.dt_min}, {config.dt_max})")
        for name in ('bn_eps', 'ln_eps'):
            if getattr(config, name) <= 0:
                errors.append(f"{name} must be > 0")
        if (config.norm_mean is None) != (config.norm_std is None):
            errors.append("norm_mean and norm_std must be given together")
        if config.norm_std is not None and any(s <= 0 for s in config.norm_std):
            errors.append("norm_std entries must be > 0")

        return errors

    @staticmethod
    def validate_training(config: 'MamAppConfig') -> List[str]:
        errors = []

        if not 0.0 <= config.label_smoothing < 1.0:
            errors.append(f"label_smoothing must be in [0, 1), got {config.label_smoothing}")
        if config.lr <= 0:
            errors.append(f"lr must be > 0, got {config.lr}")
        if config.weight_decay < 0:
            errors.append(f"weight_decay must be >= 0, got {config.weight_decay}")
        if len(config.betas) != 2 or not all(0.0 <= b < 1.0 for b in config.betas):
            errors.append(f"betas must be two values in [0, 1), got {config.betas}")
        if config.adam_eps <= 0:
            errors.append("adam_eps must be > 0")
        if config.batch_size < 1:
            errors.append(f"batch_size must be >= 1, got {config.batch_size}")
        if config.epochs < 0:
            errors.append(f"epochs must be >= 0, got {config.epochs}")
        if config.seed < 0:
            errors.append(f"seed must be >= 0, got {config.seed}")

        return errors

    @classmethod
    def validate_config(cls, config: 'MamAppConfig') -> List[str]:
        return cls.validate_architecture(config) + cls.validate_training(config)


# Standalone functions for direct import
def validate_model_config(config: 'MamAppConfig') -> 'MamAppConfig':
    """Raise ConfigError listing every violated constraint"""
    errors = ConfigValidator.validate_config(config)
    if errors:
        raise ConfigError("Invalid model config", errors)
    return config
