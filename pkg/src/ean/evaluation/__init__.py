"""Rationale and prediction metrics, annotator agreement, significance
testing, chunk ablation, and the non-neural baselines."""

from . import agreement, metrics  # noqa: F401

__all__ = ["agreement", "metrics", "ablation", "baselines"]


def __getattr__(name):
    # ablation and baselines import the training loop; load them lazily so
    # that importing this package never creates an import cycle.
    if name in ("ablation", "baselines"):
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
