import pytest

from ffpkit.data import DataParams
from ffpkit.dit import DitConfig
from ffpkit.training import DatasetConfig, HeadsConfig, LossConfig, OptimConfig, RunConfig


def tiny_config(**overrides) -> RunConfig:
    """A run small enough to train in well under a second."""
    cfg = RunConfig(
        seed=0,
        model=DitConfig(frames=3, height=4, width=4, channels=4, model_width=32, heads=4, blocks=2, ast_rope=True, predictor_hidden=8),
        data=DataParams(frames=3, height=8, width=8, rect_min=2, rect_max=3, max_speed=1.0),
        dataset=DatasetConfig(train_samples=8, eval_samples=4),
        loss=LossConfig(),
        optim=OptimConfig(batch_size=2, steps=6),
        heads=HeadsConfig(samples=3, pretrain_steps=4),
        eval_steps=2,
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


@pytest.fixture
def tiny_cfg():
    return tiny_config()


# -- acceptance reporting: one PASS/FAIL line per criterion ---------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        if marker is not None and report.when == "setup" and report.failed:
            _CRITERIA[marker.args[0]] = ("FAIL", "setup error")
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _CRITERIA[marker.args[0]] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
