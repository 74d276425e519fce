"""
Pytest configuration and fixtures for ScoreDVI tests.
"""

import sys

import numpy as np
import pytest
from click.testing import CliRunner

from scoredvi.config import ElboConfig
from scoredvi.synth import NoiseModel, add_noise, gen_clean


@pytest.fixture
def rng():
    """Provide a seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def small_image(rng):
    """Provide a small single-channel image in [0, 1]."""
    return rng.uniform(0.0, 1.0, (1, 6, 5))


@pytest.fixture
def noisy_constant():
    """Provide a 64x64 constant scene with sigma=25/255 AWGN and its clean version."""
    clean = gen_clean("constant", 64, value=0.5)
    noisy = add_noise(clean, NoiseModel(kind="awgn", sigma=25.0 / 255.0), np.random.default_rng(7))
    return clean, noisy


@pytest.fixture
def fast_config():
    """Provide an ElboConfig small enough for unit tests."""
    return ElboConfig(K=2, M=2, T=3, lr=1e-2, delta=20.0, log_every=0)


@pytest.fixture
def runner():
    """Provide a click CliRunner."""
    return CliRunner()


@pytest.fixture
def copy_denoiser(tmp_path):
    """Provide a script that acts as an identity external denoiser."""
    script = tmp_path / "copy_denoiser.py"
    script.write_text(
        "import shutil, sys\n"
        "shutil.copyfile(sys.argv[1], sys.argv[2])\n",
        encoding="utf-8",
    )
    return f"{sys.executable} {script} {{in}} {{out}} {{nv}}"


@pytest.fixture
def failing_denoiser(tmp_path):
    """Provide a script that always exits with status 1."""
    script = tmp_path / "failing_denoiser.py"
    script.write_text(
        "import sys\n"
        "sys.stderr.write('model file missing')\n"
        "sys.exit(1)\n",
        encoding="utf-8",
    )
    return f"{sys.executable} {script} {{in}} {{out}} {{nv}}"
