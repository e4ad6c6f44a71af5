import os

# single-threaded BLAS: bit-stable reductions and honest one-core timings
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from dcen.config import TrainConfig  # noqa: E402
from dcen.data import SynthConfig, generate_synthetic  # noqa: E402
from dcen.encoders import ArchConfig, init_encoders  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture(scope="session")
def tiny_ds():
    return generate_synthetic(SynthConfig(num_seen=4, num_unseen=2, attr_dim=6,
                                          samples_per_class=10, image_size=16, seed=3))


def tiny_cfg(**kw) -> TrainConfig:
    base = dict(steps=10, batch_size=8, conv_widths=(8, 8, 16), norm_groups=4, embed_dim=16,
                queue_capacity=64, augmentation={"preset": "default", "out_size": 16})
    base.update(kw)
    return TrainConfig.from_dict(base)


@pytest.fixture
def small_arch():
    return ArchConfig(attr_dim=6, input_shape=(16, 16, 3), conv_widths=(8, 8, 16), norm_groups=4,
                      embed_dim=16, sem_hidden=16, dec_hidden=16)


@pytest.fixture
def small_enc(small_arch):
    return init_encoders(small_arch, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
