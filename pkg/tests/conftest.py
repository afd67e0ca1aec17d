import pathlib

import pytest

from modns import wire

TESTDATA = pathlib.Path(__file__).resolve().parent.parent / "testdata"


def load_vector(path):
    meta, hexlines = {}, []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
        elif line.strip():
            hexlines.append(line.strip())
    payload = bytes.fromhex(meta["payload"])
    if meta["kind"] == "modns":
        env = wire.Envelope.modns([wire.NodeAddr.parse(h) for h in meta["hops"].split()], payload)
    elif meta["kind"] == "adns":
        env = wire.Envelope.adns(wire.NodeAddr.parse(meta["target"]), payload)
    else:
        env = wire.Envelope.bare(payload)
    return env, bytes.fromhex("".join(hexlines))


def golden_vectors():
    return [(p.name, *load_vector(p)) for p in sorted((TESTDATA / "wire").glob("*.hex"))]


@pytest.fixture(scope="session")
def vectors():
    return golden_vectors()


# one line per acceptance criterion, appended by test_acceptance and echoed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
