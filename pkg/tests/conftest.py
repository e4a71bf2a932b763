from pathlib import Path
from typing import Iterator

import numpy as np
import pytest

from utils.autodiff import set_default_dtype
from utils.corpus import CorpusData, generate_corpus, load_corpus
from utils.data_types.config_types import ExperimentConfig
from utils.data_types.corpus_types import CorpusConfig
from utils.logging import LoggerFactory


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale training tests")


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "slow: desk-scale training run, needs --runslow")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def setup_logging(tmp_path: Path) -> Iterator[None]:
    """Initialize logging before each test."""
    log_dir = tmp_path / "logs"
    log_dir.mkdir()
    LoggerFactory.initialize(log_path=log_dir / "test.log", debug=False, console_output=False, rotate_logs=False)
    yield
    LoggerFactory.reset()


@pytest.fixture(autouse=True)
def float64() -> Iterator[None]:
    set_default_dtype("float64")
    yield
    set_default_dtype("float64")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


TINY_CONFIG = {
    "visual_frontend": {"kind": "passthrough", "output_dim": 4},
    "audio_frontend": {"kind": "passthrough", "output_dim": 4},
    "encoder": {"num_blocks": 2, "model_dim": 8, "ff_dim": 16, "head_dim": 4, "dropout": 0.0, "conv_kernel": 3, "tap_layer": 1, "max_relative": 4},
    "decoder": {"num_blocks": 1, "model_dim": 8, "ff_dim": 16, "head_dim": 4, "dropout": 0.0, "max_positions": 32},
    "lm": {"num_blocks": 1, "model_dim": 8, "ff_dim": 16, "head_dim": 4, "dropout": 0.0, "max_positions": 32, "epochs": 1, "batch_size": 4, "warmup_steps": 10},
    "decode": {"beam_size": 2, "lm_weight": 0.0},
    "curriculum": {"caps": [12, 40]},
    "optimizer": {"peak_lr": 1e-2, "warmup_steps": 10},
    "train": {"epochs": 2, "teacher_epochs": 2, "batch_size": 4, "halve_threshold": 40, "average_last": 2, "seeds": [0, 1], "spatial_augment": False, "crop_size": 0},
}


@pytest.fixture
def tiny_cfg() -> ExperimentConfig:
    return ExperimentConfig.from_dict(TINY_CONFIG).validate()


@pytest.fixture(scope="session")
def tiny_corpus_dir(tmp_path_factory: pytest.TempPathFactory) -> Path:
    root = tmp_path_factory.mktemp("corpus")
    cfg = CorpusConfig(
        size=10, alphabet="ab", visual_dim=4, audio_dim=4, min_chars=1, max_chars=3, dev_fraction=0.2, test_fraction=0.2
    )
    generate_corpus(cfg, root)
    return root


@pytest.fixture
def tiny_corpus(tiny_corpus_dir: Path) -> CorpusData:
    return load_corpus(tiny_corpus_dir)
