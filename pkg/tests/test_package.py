"""Package facade sanity."""

import swsbp


def test_every_exported_name_resolves():
    for name in swsbp.__all__:
        assert getattr(swsbp, name) is not None


def test_version_is_a_string():
    assert isinstance(swsbp.__version__, str)
    assert swsbp.__version__


def test_backend_is_one_of_the_two():
    assert swsbp.backend_name() in ("python", "compiled")
