import pytest

from edgepart.bundled import load_bundled
from edgepart.profiles import MB, HardwareSpec, ModelProfile

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def bundled():
    return load_bundled()


@pytest.fixture(scope="session")
def bundled_by_name(bundled):
    _, models = bundled
    return {m.name: m for m in models}


@pytest.fixture
def hw():
    return HardwareSpec(8 * MB, 320 * MB, 4)


def single_point_model(name, prefix_bytes, tpu_s, cpu_s=0.2, input_bytes=0):
    """Model with one partition point: all-CPU or all-accelerator."""
    return ModelProfile(name, input_bytes, (0, prefix_bytes), (0.0, tpu_s), (cpu_s, 0.0), (0, 0))


@pytest.fixture
def record_acceptance():
    def record(key: str, passed: bool, detail: str):
        ACCEPTANCE_RESULTS[key] = (passed, detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0])):
        passed, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {key}: {detail}")
