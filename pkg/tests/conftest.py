"""
Shared fixtures for the test suite
"""
import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
os.environ.setdefault('TESTING', 'true')
os.environ.setdefault('MAMAPP_ENV', 'testing')

from models.config import MamAppConfig  # noqa: E402


def toy_model_config(**overrides) -> MamAppConfig:
    """16x16 input, narrow widths, one block: small enough for finite differences."""
    values = dict(
        input_size=(16, 16, 3), stem_channels=(4, 8), d_model=8, d_inner=8, d_state=4, dt_rank=1,
        num_blocks=1, num_classes=3, batch_size=4, epochs=1, seed=7,
    )
    values.update(overrides)
    return MamAppConfig(**values)


def write_image_folder(root, class_sizes, size=(20, 20), seed=0, colors=None):
    """Create root/<class>/img_XXX.png with a class-specific base color plus noise."""
    from PIL import Image

    rng = np.random.default_rng(seed)
    for class_id, (name, count) in enumerate(class_sizes.items()):
        class_dir = os.path.join(str(root), name)
        os.makedirs(class_dir, exist_ok=True)
        base = np.array(colors[class_id] if colors else rng.integers(0, 256, size=3), dtype=np.float64)
        for i in range(count):
            noise = rng.normal(0.0, 4.0, size=(size[1], size[0], 3))
            pixels = np.clip(base + noise, 0, 255).astype(np.uint8)
            Image.fromarray(pixels).save(os.path.join(class_dir, f"img_{i:03d}.png"))
    return str(root)


@pytest.fixture
def toy_config():
    return toy_model_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
