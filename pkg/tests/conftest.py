import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hoidet.model import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_config():
    """Smallest config that still exercises every architectural piece."""
    return ModelConfig(
        memory_dim=32, heads=4, encoder_layers=2,
        instance_decoder_layers=1, relation_decoder_layers=1,
        num_queries=10, num_object_classes=4, num_relation_classes=5,
        patch_size=8, backbone_channels=16, image_size=32,
        ffn_dim=64, dropout=0.1,
    )
