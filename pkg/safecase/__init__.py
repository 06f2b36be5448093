__all__ = ["__version__", "Safecase"]

__version__ = "0.3.0"

from safecase.api.sdk import Safecase  # noqa: E402
