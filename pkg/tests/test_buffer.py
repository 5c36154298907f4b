"""Replay buffer: capacity bound, eviction order, sampling contract."""

import numpy as np
import pytest

from plandistill.buffer import TransitionBuffer
from plandistill.mdp import Transition


def _tr(i):
    return Transition(i, 0, float(i), i + 1)


def test_size_never_exceeds_capacity():
    buf = TransitionBuffer(5)
    for i in range(12):
        buf.add(_tr(i))
        assert len(buf) <= 5
    assert len(buf) == 5


def test_oldest_records_evicted_first():
    buf = TransitionBuffer(3)
    for i in range(5):
        buf.add(_tr(i))
    kept = sorted(buf.all()["states"].tolist())
    assert kept == [2, 3, 4]


def test_recent_returns_newest_in_insertion_order():
    buf = TransitionBuffer(4)
    for i in range(7):
        buf.add(_tr(i))
    recent = buf.recent(3)["states"].tolist()
    assert recent == [4, 5, 6]


def test_sample_batch_without_replacement():
    buf = TransitionBuffer(10)
    for i in range(10):
        buf.add(_tr(i))
    batch = buf.sample_batch(10, np.random.default_rng(0))
    assert sorted(batch["states"].tolist()) == list(range(10))


def test_sampling_errors():
    buf = TransitionBuffer(4)
    with pytest.raises(ValueError):
        buf.sample_batch(1, np.random.default_rng(0))
    buf.add(_tr(0))
    with pytest.raises(ValueError):
        buf.sample_batch(2, np.random.default_rng(0))


def test_vector_transitions_roundtrip():
    buf = TransitionBuffer(4)
    buf.add(Transition(np.array([0.1, 0.2]), np.array([0.5]), 1.0,
                       np.array([0.3, 0.4]), terminal=True))
    data = buf.all()
    assert data["states"].shape == (1, 2)
    assert data["actions"].shape == (1, 1)
    assert bool(data["terminals"][0]) is True


def test_rejects_bad_capacity():
    with pytest.raises(ValueError):
        TransitionBuffer(0)
