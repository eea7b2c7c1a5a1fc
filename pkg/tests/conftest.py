"""Shared pytest fixtures for xvl tests."""

import tempfile
from pathlib import Path

import pytest

# Import order matters: xvl.cli registers the command modules.
import xvl.cli  # noqa: F401
from xvl.services.synthdata import default_class_mix, generate_corpus
from xvl.services.textpipe import build_vocab
from xvl.services.zeroshot import default_prompts
from xvl.utils.config import XVLConfig

# Flat overrides for a model that trains in well under a second per step
TINY_MODEL = {
    "image_size": 16,
    "patch_size": 8,
    "dim": 32,
    "embed_dim": 16,
    "vision_layers": 1,
    "text_layers": 1,
    "fusion_layers": 1,
    "heads": 2,
    "mlp_ratio": 2,
    "max_len": 40,
    "sentence_max_len": 16,
}

TINY_TRAIN = {
    "epochs": 2,
    "warmup_epochs": 1,
    "batch_size": 4,
    "queue_size": 8,
    "seed": 0,
}


def tiny_overrides(**extra) -> list[str]:
    """`-o key=value` arguments for the tiny configuration."""
    args = []
    for key, value in {**TINY_MODEL, **TINY_TRAIN, **extra}.items():
        args += ["-o", f"{key}={value}"]
    return args


@pytest.fixture
def temp_dir():
    """Create a temporary directory for test artifacts."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    """Keep XVL_* variables from the developer's shell out of the tests."""
    for name in ("XVL_SEED", "XVL_EPOCHS", "XVL_BATCH_SIZE", "XVL_QUEUE_SIZE"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv("HOME", tempfile.gettempdir())
    yield


@pytest.fixture
def tiny_config():
    """Configuration for a one-layer-per-stack model on 16x16 images."""
    config = XVLConfig()
    config.update({**TINY_MODEL, **TINY_TRAIN})
    return config


@pytest.fixture(scope="session")
def small_corpus():
    """Twenty-four 16x16 studies over all six classes."""
    return generate_corpus(24, default_class_mix(), rng_seed=7, image_size=16)


@pytest.fixture(scope="session")
def vocab(small_corpus):
    """Vocabulary over the small corpus plus the default prompts."""
    return build_vocab(small_corpus, extra_texts=default_prompts().texts())
