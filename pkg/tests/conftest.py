import pytest

from discurate import pipeline
from discurate.config import load_config
from discurate.fixture import write_fixture


@pytest.fixture(scope="session")
def fixture_run(tmp_path_factory):
    """One full pipeline run over the bundled two-scene fixture.

    Shared read-only by pipeline, CLI, and acceptance tests; tests that
    mutate state must build their own root.
    """
    root = tmp_path_factory.mktemp("fixture_run")
    manifest_path, config_path = write_fixture(root)
    config = load_config(config_path)
    report = pipeline.run(config)
    return {
        "root": root,
        "manifest_path": manifest_path,
        "config_path": config_path,
        "config": config,
        "report": report,
    }
