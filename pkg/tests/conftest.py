import pytest

from pttrace import recorder


@pytest.fixture(autouse=True)
def _private_state_dir(tmp_path_factory, monkeypatch):
    # keep a user's ~/.pt control file from turning tracing on in fixtures
    monkeypatch.setenv("PT_STATE_DIR", str(tmp_path_factory.mktemp("ptstate")))
    for key in ("PT_TRACE_SESSION", "PT_TRACE_EVENTS", "PT_TRACE_OUTPUT_DIR"):
        monkeypatch.delenv(key, raising=False)


@pytest.fixture(autouse=True)
def _no_leaked_session():
    yield
    s = recorder.active_session()
    if s is not None:
        recorder.session_stop(s)


@pytest.fixture(params=["native", "python"])
def ring_impl(request, monkeypatch):
    """Run a test against both ring implementations."""
    if request.param == "native":
        if not recorder.native_available():
            pytest.skip("native ring extension not built")
        monkeypatch.delenv("PT_PURE_PYTHON_RING", raising=False)
    else:
        monkeypatch.setenv("PT_PURE_PYTHON_RING", "1")
    return request.param


@pytest.fixture
def trace_path(tmp_path):
    return tmp_path / "t.ptrc"
