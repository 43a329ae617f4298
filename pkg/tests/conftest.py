import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bilinear_decomp import container  # noqa: E402
from bilinear_decomp.dataset import load_idx_split  # noqa: E402
from bilinear_decomp.model import init_model  # noqa: E402
from bilinear_decomp.spectral import model_spectra  # noqa: E402
from bilinear_decomp.train import TrainConfig, train  # noqa: E402

MNIST_CANDIDATES = (
    Path(__file__).resolve().parent.parent / "data" / "mnist",
    Path("/root/data/mnist"),
)


def mnist_dir():
    """IDX directory from ``MNIST_DIR`` or a known location; skips when absent."""
    env = os.environ.get("MNIST_DIR")
    for cand in ([Path(env)] if env else []) + list(MNIST_CANDIDATES):
        if (cand / "train-images-idx3-ubyte").exists() or (cand / "train-images-idx3-ubyte.gz").exists():
            return cand
    pytest.skip("MNIST IDX files not found; set MNIST_DIR")


@pytest.fixture(scope="session")
def mnist():
    root = mnist_dir()
    return load_idx_split(root, "train"), load_idx_split(root, "test")


class MnistRuns:
    """Trains the reference d=300 MNIST models once per session, keyed by seed.

    If ``MNIST_MODEL_CACHE`` names a directory, trained checkpoints are
    written there and reused by later sessions.
    """

    def __init__(self, train_set, test_set):
        self.train_set = train_set
        self.test_set = test_set
        self.models = {}
        self.reports = {}
        self.spectra = {}
        self.cpu_seconds = {}
        cache = os.environ.get("MNIST_MODEL_CACHE")
        self.cache = Path(cache) if cache else None

    def model(self, seed):
        if seed not in self.models:
            path = self.cache / f"mnist_d300_seed{seed}.blnr" if self.cache else None
            if path is not None and path.exists():
                self.models[seed], _ = container.load_model(path)
            else:
                start = time.process_time()
                config = TrainConfig(epochs=20, seed=seed)
                model = init_model(784, 300, 10, 1, seed=seed)
                report = train(model, self.train_set, config, validation=self.test_set,
                               progress=lambda line: print(f"[seed {seed}] {line}", flush=True))
                self.reports[seed] = report
                self.cpu_seconds[seed] = time.process_time() - start
                self.models[seed] = report.model
                if path is not None:
                    path.parent.mkdir(parents=True, exist_ok=True)
                    container.save_model(path, report.model, config.to_dict())
        return self.models[seed]

    def class_spectra(self, seed):
        if seed not in self.spectra:
            self.spectra[seed] = model_spectra(self.model(seed))
        return self.spectra[seed]


@pytest.fixture(scope="session")
def mnist_runs(mnist):
    return MnistRuns(*mnist)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


@contextmanager
def criterion(number, title):
    """Record one PASS/FAIL/SKIP line for an acceptance criterion."""
    detail = {}
    start = time.perf_counter()
    status = "FAIL"
    try:
        yield detail
        status = "PASS"
    except pytest.skip.Exception as exc:
        status = "SKIP"
        detail["reason"] = str(exc)
        raise
    except Exception as exc:
        detail.setdefault("error", str(exc).splitlines()[0] if str(exc) else type(exc).__name__)
        raise
    finally:
        detail["wall"] = f"{time.perf_counter() - start:.1f}s"
        info = " ".join(f"{k}={v}" for k, v in detail.items())
        ACCEPTANCE[number] = f"criterion {number:>2} {status}: {title} ({info})"
        print(ACCEPTANCE[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
