import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_config():
    from hima.model import ModelConfig

    return ModelConfig(
        levels=2, widths=(4, 8), blocks_per_level=1, block_types=("lsb", "ssb"),
        loda_patch_sizes=(4,), pdb_width=8, pdb_depth=1, meta_dim=4, d_state=2,
    )
