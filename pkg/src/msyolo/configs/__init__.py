"""Bundled model configurations."""

from importlib.resources import files


def bundled_config(name: str) -> str:
    """Text of a bundled ``.cfg`` file, e.g. ``bundled_config("demo_stack")``."""
    return files(__name__).joinpath(f"{name}.cfg").read_text(encoding="utf-8")
