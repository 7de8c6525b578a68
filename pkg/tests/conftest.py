from pathlib import Path

import numpy as np
import pytest

from rbr.bitfeatures import BitMatrix

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def random_bits(rng, n, k, p=0.5):
    """Random BitMatrix with an all-ones intercept column, plus its dense form."""
    dense = (rng.random((n, k)) < p).astype(np.float64)
    dense[:, 0] = 1.0
    return BitMatrix.from_dense(dense), dense


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_table(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    return path


# Acceptance results, printed as one line per criterion at the end of the run.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {text}")
