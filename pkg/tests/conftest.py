import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


def band_limited(gen, n, keep=0.25):
    """Random real volume with |k| above ``keep`` times Nyquist zeroed."""
    s = np.fft.fftn(gen.normal(size=(n, n, n)))
    f = np.fft.fftfreq(n)
    k2 = f[:, None, None] ** 2 + f[None, :, None] ** 2 + f[None, None, :] ** 2
    return np.real(np.fft.ifftn(s * (k2 <= (keep * 0.5) ** 2)))


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``record(n, ok, detail)`` files one pass/fail line for the summary."""
    def record(n, ok, detail):
        line = f"criterion {n:>3}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: (int(str(k).rstrip("abc")), str(k))):
            terminalreporter.write_line(ACCEPTANCE[key])
