import hashlib
import json
import os
import time
from pathlib import Path

import pytest

from invkit.models import appendix_b, build_poly_system
from invkit.sos import Certificate, compute_certificate


class CertCache:
    """Session-wide memo of solved certificates.

    Set ``INVKIT_TEST_CACHE`` to a directory to keep solved certificates
    between pytest sessions.
    """

    def __init__(self, root: Path | None):
        self.root = root
        self.mem = {}
        self.timings = {}

    def system(self, order, taylor_order=2, unc_scale=1.0, **overrides):
        s = build_poly_system(order, appendix_b(order, **overrides), taylor_order)
        return s.with_uncertainty_scale(unc_scale) if unc_scale != 1.0 else s

    def get(self, order, kind, k, taylor_order=2, a=100.0, unc_scale=1.0, **overrides):
        key = json.dumps([order, kind, k, taylor_order, a, unc_scale, sorted(overrides.items())])
        if key in self.mem:
            return self.mem[key]
        path = None
        if self.root is not None:
            path = self.root / (hashlib.sha256(key.encode()).hexdigest()[:16] + ".json")
            if path.exists():
                self.mem[key] = Certificate.load(path)
                return self.mem[key]
        system = self.system(order, taylor_order, unc_scale, **overrides)
        t0 = time.perf_counter()
        cert = compute_certificate(system, kind, k, a=a)
        self.timings[key] = time.perf_counter() - t0
        if path is not None:
            cert.save(path)
        self.mem[key] = cert
        return cert


@pytest.fixture(scope="session")
def certs():
    root = os.environ.get("INVKIT_TEST_CACHE")
    if root:
        Path(root).mkdir(parents=True, exist_ok=True)
    return CertCache(Path(root) if root else None)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def verdicts():
    """Acceptance tests append one ``PASS``/``FAIL`` line each; printed at session end."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
