"""Shared fixtures and independent numerical oracles."""
import numpy as np
import pytest
from hypothesis import settings

from primer_gait import config, models

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def vlip():
    return models.VLIP(mass=1.0)


@pytest.fixture
def chain():
    return models.TwoLinkChain()


@pytest.fixture(scope="session")
def fig2_config():
    return config.load_config(config.scenario_path("fig2_scenario"))


def numerical_jacobian(fn, x, h=1e-6):
    """Central-difference Jacobian, columns indexed by the entries of ``x``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def vlip_com(q, L_index=2):
    """Point-mass position of the pendulum, written out independently of the package."""
    th, ph, L = q
    return L * np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])


def chain_points(q, lengths=(0.5, 0.5)):
    """Link-midpoint positions of the two-link chain (x, z), hanging along -z at q = 0."""
    l1, l2 = lengths
    q1, q2 = q
    p1 = 0.5 * l1 * np.array([np.sin(q1), -np.cos(q1)])
    p2 = l1 * np.array([np.sin(q1), -np.cos(q1)]) + 0.5 * l2 * np.array([np.sin(q1 + q2), -np.cos(q1 + q2)])
    return p1, p2


def kinetic_hessian(points_fn, masses, q, h=1e-6):
    """Inertia matrix as the qdot-Hessian of T = sum m |J qdot|^2 / 2, with J by finite differences."""
    D = 0.0
    for i, m in enumerate(masses):
        J = numerical_jacobian(lambda x: points_fn(x)[i], q, h)
        D = D + m * J.T @ J
    return D


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record and print a one-line verdict for an acceptance criterion."""
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
