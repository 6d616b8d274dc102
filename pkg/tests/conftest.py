import numpy as np
import pytest

from botmosaic import ChannelModel, Detector, WatermarkParams, generate_key, insert_watermark, mix


def brute_counts(timestamps, base, T, n):
    """Per-packet scan over ``[base + j*T, base + (j+1)*T)`` for ``j < n``."""
    counts = np.zeros(n, dtype=np.int64)
    for t in timestamps:
        for j in range(n):
            if base + j * T <= t < base + (j + 1) * T:
                counts[j] += 1
                break
    return counts


def clean_mixture(seed, l=64, T=0.5, R=10, epoch=0.0):
    key = generate_key(seed, l, T, epoch)
    params = WatermarkParams(T=T, l=l, R=R)
    flows = insert_watermark(key, params, seed + 1)
    return key, params, flows, mix(flows)


@pytest.fixture
def noiseless():
    return ChannelModel.noiseless()


@pytest.fixture
def ref_key():
    return generate_key(7, 64, 0.5)


@pytest.fixture
def ref_detector(ref_key):
    return Detector(ref_key, eta=1, theta=32)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for name in sorted(test_acceptance.VERDICTS):
            terminalreporter.write_line(test_acceptance.VERDICTS[name])
