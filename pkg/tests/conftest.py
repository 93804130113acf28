from hypothesis import settings

settings.register_profile("sqe2d", deadline=None, max_examples=50)
settings.load_profile("sqe2d")

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
