import pytest

from extbisim.iomodel import BlockDevice, MachineConfig, KiB, MiB


@pytest.fixture
def device(tmp_path):
    with BlockDevice(MachineConfig(4 * MiB, 4 * KiB, str(tmp_path))) as dev:
        yield dev


@pytest.fixture
def tiny_device(tmp_path):
    # forces spills and multi-pass merges on a few thousand records
    with BlockDevice(MachineConfig(16 * KiB, 1 * KiB, str(tmp_path))) as dev:
        yield dev


def pytest_terminal_summary(terminalreporter):
    from helpers import RESULTS

    if not RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(RESULTS):
        checks = RESULTS[number]
        ok = all(passed for _, passed, _ in checks)
        tr.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}")
        for name, passed, detail in checks:
            tr.write_line(f"    {name}: {'pass' if passed else 'FAIL'}  {detail}")
