from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np
import pytest

from hiddenregime.model import build_model, model_from_dict, validate_model

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def config_model(name: str):
    cfg = json.loads((CONFIGS / name).read_text())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return validate_model(model_from_dict(cfg["model"]))


def two_regime(**overrides):
    """Two-regime model used across unit tests."""
    kw = dict(
        generator=[[-1.0, 1.0], [1.5, -1.5]],
        mu=[0.12, 0.02],
        credit_drift=[0.07, 0.04],
        hazard=[0.1, 0.5],
        sigma=0.2,
        upsilon=0.3,
        rate=0.02,
        gamma=0.5,
        horizon=1.0,
        p0=[0.5, 0.5],
    )
    kw.update(overrides)
    return build_model(**kw)


def single_regime(**overrides):
    kw = dict(generator=[[0.0]], mu=[0.1], credit_drift=[0.06], hazard=[0.1], sigma=0.2,
              upsilon=0.3, rate=0.02, gamma=0.5, horizon=1.0, p0=[1.0])
    kw.update(overrides)
    return build_model(**kw)


def merton_two(**overrides):
    """Two regimes with identical parameters."""
    kw = dict(generator=[[-1.0, 1.0], [1.0, -1.0]], mu=[0.1, 0.1], credit_drift=[0.05, 0.05],
              hazard=[0.2, 0.2])
    kw.update(overrides)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return validate_model(two_regime(**kw))


@pytest.fixture
def model2():
    return validate_model(two_regime())


@pytest.fixture
def model1():
    return validate_model(single_regime())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
