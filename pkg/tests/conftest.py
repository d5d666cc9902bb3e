from dataclasses import dataclass, replace

import numpy as np
import pytest

from trn import nn
from trn.data import Dataset, generate_dataset, order_critical_spec, order_free_spec
from trn.sampling import SamplingPlan
from trn.training import EvalReport, TrainConfig, evaluate, fit

ACCEPT_SEED = 7
DATA_SEED = 100
GRID_SCALES = (2, 3, 4, 5)


@pytest.fixture
def float64_mode():
    """Run a test under the 64-bit precision switch, then restore."""
    previous = nn.get_default_dtype()
    nn.set_default_dtype(np.float64)
    yield
    nn.set_default_dtype(previous)


def max_rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float((np.abs(a - b) / denom).max())


def preset_config(num_frames, pooling="temporal-relation", seed=ACCEPT_SEED, epochs=20):
    return TrainConfig(
        epochs=epochs,
        batch_size=32,
        learning_rate=0.08,
        momentum=0.9,
        seed=seed,
        plan=SamplingPlan(num_frames=num_frames, subsamples=3, mode="random"),
        pooling=pooling,
    )


@dataclass
class TrainedCell:
    model: object
    plan: SamplingPlan
    pooling: str
    report: EvalReport  # ordered validation evaluation


@dataclass
class TrainedSuite:
    """Models the heavyweight acceptance criteria share.

    ``grid`` maps (pooling, num_frames) to a trained cell on the
    order-critical preset; ``order_free`` holds the same two poolings at
    the top scale on the order-free preset.
    """

    train_set: Dataset
    val_set: Dataset
    grid: dict
    order_free_val: Dataset
    order_free: dict
    grid_seconds: float = 0.0


@pytest.fixture(scope="session")
def order_critical_bundle():
    return generate_dataset(
        order_critical_spec(), seed=DATA_SEED, counts={"train": 4000, "val": 1600}
    )


@pytest.fixture(scope="session")
def order_free_bundle():
    return generate_dataset(
        order_free_spec(), seed=DATA_SEED, counts={"train": 4000, "val": 1600}
    )


def train_cell(train_set, val_set, num_frames, pooling, seed=ACCEPT_SEED, epochs=20):
    cfg = preset_config(num_frames, pooling, seed=seed, epochs=epochs)
    model, _ = fit(train_set, cfg, hidden_dim=64)
    report = evaluate(model, val_set, cfg.plan, pooling)
    return TrainedCell(model=model, plan=cfg.plan, pooling=pooling, report=report)


@pytest.fixture(scope="session")
def trained_suite(order_critical_bundle, order_free_bundle) -> TrainedSuite:
    import time

    train_set = order_critical_bundle["train"]
    val_set = order_critical_bundle["val"]
    grid = {}
    t0 = time.monotonic()
    for pooling in ("temporal-relation", "average-pool"):
        for n in GRID_SCALES:
            grid[(pooling, n)] = train_cell(train_set, val_set, n, pooling)
    grid_seconds = time.monotonic() - t0
    of_train = order_free_bundle["train"]
    of_val = order_free_bundle["val"]
    order_free = {
        pooling: train_cell(of_train, of_val, 5, pooling)
        for pooling in ("temporal-relation", "average-pool")
    }
    return TrainedSuite(
        train_set=train_set,
        val_set=val_set,
        grid=grid,
        order_free_val=of_val,
        order_free=order_free,
        grid_seconds=grid_seconds,
    )


@pytest.fixture(scope="session")
def noiseless_val():
    spec = replace(order_critical_spec(), noise_sigma=0.0)
    return generate_dataset(spec, seed=DATA_SEED + 1, counts={"val": 320})["val"]
