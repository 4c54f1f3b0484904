import numpy as np
import pytest

from fastmd.model import MDModel, MDModelConfig


def tiny_config(**overrides) -> MDModelConfig:
    base = dict(asr_vocab_size=10, st_vocab_size=9, feat_dim=8, asr_encoder_layers=2,
                asr_decoder_layers=2, st_encoder_layers=1, st_decoder_layers=2,
                d_model=16, d_ff=32, heads=2, interctc_layers=(1,), conv_kernel=5)
    base.update(overrides)
    return MDModelConfig(**base)


def tiny_model(seed: int = 0, **overrides) -> MDModel:
    return MDModel.initialize(tiny_config(**overrides), seed=seed)


def features(seed: int, n_frames: int, feat_dim: int = 8) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=(n_frames, feat_dim))


@pytest.fixture(scope="session")
def ar_model():
    return tiny_model(0)


@pytest.fixture(scope="session")
def cmlm_model():
    return tiny_model(1, decoder_kind="cmlm")


@pytest.fixture(scope="session")
def conformer_model():
    return tiny_model(2, encoder_kind="conformer")


# -- acceptance summary ------------------------------------------------------

_acceptance: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        detail = dict(report.user_properties).get("detail", "")
        name = report.nodeid.split("::")[-1]
        if name not in _acceptance or report.outcome != "passed":
            _acceptance[name] = (report.outcome.upper(), detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, (outcome, detail) in sorted(_acceptance.items()):
        status = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"{status} {name}: {detail}")
