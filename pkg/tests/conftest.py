import numpy as np
import pytest

from kwmlp.config import RunConfig
from kwmlp.dataset import FeatureStore, scan_dataset
from kwmlp.synthetic import make_tone_dataset
from kwmlp.training import evaluate, train

TOY_EPOCHS = 200
TOY_TARGET = 0.99


@pytest.fixture(scope="session")
def tone_root(tmp_path_factory):
    return make_tone_dataset(tmp_path_factory.mktemp("tones"), per_class=40, seed=0)


@pytest.fixture(scope="session")
def tone_index(tone_root):
    return scan_dataset(tone_root)


@pytest.fixture(scope="session")
def tone_features(tone_root):
    return FeatureStore(tone_root, RunConfig().mfcc_config(), preload=True)


def toy_config(**overrides) -> RunConfig:
    """Full published recipe, five output classes, 200 epochs."""
    return RunConfig(epochs=TOY_EPOCHS, num_classes=5).with_overrides(overrides)


def overfit(cfg: RunConfig, index, features, target=TOY_TARGET):
    """Train until train-split accuracy reaches ``target`` (or epochs run out).

    Returns ``(params, result, train_accs)``.
    """
    params = cfg.build_model()
    accs = []

    def stop(row):
        acc, _ = evaluate(params, index, "train", features)
        accs.append(acc)
        return acc >= target

    result = train(params, index, cfg.train_config(), features, callback=stop)
    return params, result, accs


@pytest.fixture(scope="session")
def overfit_run(tone_index, tone_features):
    cfg = toy_config()
    params, result, accs = overfit(cfg, tone_index, tone_features)
    return cfg, params, result, accs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance report -----------------------------------------------------------
# Each acceptance test records one line per criterion; the lines are printed
# in the terminal summary so they survive output capture.

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, ok: bool, detail: str) -> None:
        results[number] = (ok, detail)
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
