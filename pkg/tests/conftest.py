import numpy as np
import pytest

from koopstab import autodiff as ad


def fd_relative_error(build, params, h=1e-6):
    """Largest relative error between tape gradients and central differences.

    ``build(tape, leaves)`` returns the scalar loss tensor.
    """
    tape = ad.Tape()
    leaves = {k: tape.param(k, v) for k, v in params.items()}
    grads = tape.backward(build(tape, leaves))

    def value_at(p):
        t = ad.Tape()
        return float(ad.value(build(t, {k: t.param(k, v) for k, v in p.items()}))[0, 0])

    worst = 0.0
    for name, v in params.items():
        fd = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            plus = {k: x.copy() for k, x in params.items()}
            minus = {k: x.copy() for k, x in params.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            fd[idx] = (value_at(plus) - value_at(minus)) / (2 * h)
        denom = max(np.linalg.norm(fd), np.linalg.norm(grads[name]), 1e-8)
        worst = max(worst, np.linalg.norm(fd - grads[name]) / denom)
    return worst


@pytest.fixture
def fd_check():
    return fd_relative_error


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    def record(tag, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {tag}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
