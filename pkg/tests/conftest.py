import math

import numpy as np
from hypothesis import settings
from hypothesis import strategies as st

from autobid.model import Instance

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# acceptance lines collected by test_acceptance and echoed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


values = st.floats(min_value=0.01, max_value=100.0, allow_nan=False)
budgets = st.one_of(st.just(math.inf), st.floats(min_value=0.01, max_value=100.0))


@st.composite
def instances(draw, max_n=3, max_q=3, n=None, q=None):
    n = n or draw(st.integers(1, max_n))
    q = q or draw(st.integers(1, max_q))
    v = draw(st.lists(st.lists(values, min_size=q, max_size=q), min_size=n, max_size=n))
    b = draw(st.lists(budgets, min_size=n, max_size=n))
    return Instance(b, v)


@st.composite
def instance_and_bids(draw, max_n=3, max_q=3, n=None):
    inst = draw(instances(max_n=max_n, max_q=max_q, n=n))
    frac = draw(st.lists(st.floats(0.0, 1.0), min_size=inst.values.size, max_size=inst.values.size))
    return inst, np.array(frac).reshape(inst.values.shape) * inst.values
