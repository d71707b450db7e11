import torch

torch.set_num_threads(1)

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion with its runtime budget")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    verdict = "FAIL" if call.excinfo is not None else "PASS"
    measured = [v for k, v in item.user_properties if k == "measured"]
    _ACCEPTANCE[number] = (title, verdict, call.duration, measured)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, verdict, seconds, measured = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {title}  ({seconds:.1f} s)")
        for line in measured:
            terminalreporter.write_line(f"    {line}")
