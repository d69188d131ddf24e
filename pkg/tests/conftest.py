from __future__ import annotations

import numpy as np
import pytest

from memflow.grid import CellGrid


def smooth_flow(mesh: CellGrid, amp: float, seed: int, modes: int = 1):
    """Divergence-free velocity from a random stream function, with its gradient.

    ``psi = sum a sin(2 pi k x + phase) sin^2(pi l y)`` keeps ``v = 0`` on the
    walls. Returns cell-centre velocity ``(n, 2)`` and ``kappa_ij = d u_j / d x_i``.
    """
    rng = np.random.default_rng(seed)
    x = mesh.flat_centers()
    X, Y = x[:, 0], x[:, 1]
    p = np.pi
    u = np.zeros((len(X), 2))
    k = np.zeros((len(X), 2, 2))
    for kx in range(1, modes + 1):
        for ly in range(1, modes + 1):
            a = amp * rng.normal() / (kx * ly) ** 2
            ph = rng.uniform(0, 2 * p)
            sx, cx = np.sin(2 * p * kx * X + ph), np.cos(2 * p * kx * X + ph)
            sy = np.sin(p * ly * Y) ** 2
            dsy = p * ly * np.sin(2 * p * ly * Y)
            d2sy = 2 * (p * ly) ** 2 * np.cos(2 * p * ly * Y)
            u[:, 0] += a * sx * dsy
            u[:, 1] += -a * 2 * p * kx * cx * sy
            k[:, 0, 0] += a * 2 * p * kx * cx * dsy
            k[:, 1, 0] += a * sx * d2sy
            k[:, 0, 1] += a * (2 * p * kx) ** 2 * sx * sy
            k[:, 1, 1] += -a * 2 * p * kx * cx * dsy
    return u, k


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number: int, label: str, ok: bool, detail: str) -> None:
        lines.append((number, f"{'PASS' if ok else 'FAIL'} [{number:2d}] {label}: {detail}"))
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
