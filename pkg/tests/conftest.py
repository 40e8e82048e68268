collect_ignore = []


def pytest_configure(config):
    # TestFunctionND is a dataclass named like a test class; keep pytest from
    # trying to collect it
    config.addinivalue_line(
        "filterwarnings",
        "ignore:cannot collect test class 'TestFunctionND':pytest.PytestCollectionWarning",
    )
