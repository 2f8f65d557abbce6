"""Shared fixtures: datasets and trained models reused across suites."""

from __future__ import annotations

import pytest

from regenedit.dataset import gen_dataset
from regenedit.denoiser import encode_image, init_model, train_toy
from regenedit.prompts import embed_sentence
from regenedit.rng import SeededRng
from regenedit.schedule import build_schedule


@pytest.fixture(scope="session")
def sched300():
    return build_schedule(300)


@pytest.fixture(scope="session")
def dataset130():
    return gen_dataset(130, 32, SeededRng(0).spawn("data"))


def _train(dataset, sched, steps):
    pairs = [(encode_image(s.image), embed_sentence(s.caption)) for s in dataset]
    model = init_model(300, SeededRng(0).spawn("init"))
    model, _ = train_toy(model, pairs, steps, 1e-3, SeededRng(0).spawn("train"), sched)
    return model


@pytest.fixture(scope="session")
def tiny_model(dataset130, sched300):
    """Briefly trained model; enough structure for mechanism tests."""
    return _train(dataset130, sched300, 600)


@pytest.fixture(scope="session")
def trained_model(dataset130, sched300):
    """Fully trained model backing the end-to-end quality criteria."""
    return _train(dataset130, sched300, 30000)
