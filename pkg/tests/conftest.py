import json
from pathlib import Path

import numpy as np
import pytest


def write_raw(dirpath: Path, stem: str, values, dims, dtype="f64", payload_bytes=None, **extra):
    """Hand-written sidecar pair, independent of the package writer."""
    meta = {"dims": list(dims), "dtype": dtype, **extra}
    (dirpath / f"{stem}.json").write_text(json.dumps(meta))
    np_dtype = {"f64": "<f8", "i16": "<i2", "u8": "u1"}[dtype]
    data = np.asarray(values, dtype=np_dtype).tobytes()
    if payload_bytes is not None:
        data = data[:payload_bytes]
    (dirpath / f"{stem}.raw").write_bytes(data)
    return dirpath / f"{stem}.json"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
