from importlib.metadata import version

from arhscope.cli import main

__version__ = version("arhscope")
__all__ = ["main", "__version__"]
