import sys

import numpy as np
from hypothesis import strategies as st

from embstore.workload import Trace


@st.composite
def traces(draw, max_n=40, max_queries=30, max_len=6, tables=1):
    """Small multi-table traces; queries may repeat ids."""
    sizes = {t: draw(st.integers(1, max_n)) for t in range(tables)}
    nq = draw(st.integers(1, max_queries))
    qt, lens, flat = [], [], []
    for _ in range(nq):
        t = draw(st.sampled_from(sorted(sizes)))
        ids = draw(st.lists(st.integers(0, sizes[t] - 1), min_size=1, max_size=max_len))
        qt.append(t)
        lens.append(len(ids))
        flat.extend(ids)
    offsets = np.concatenate([[0], np.cumsum(lens)])
    return Trace(sizes, np.array(qt), offsets, np.array(flat))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
