"""Attentive tabular learning: sequential sparse feature selection over
encoded CSV data, trained with cross-entropy or focal objectives.

Submodules are imported lazily so that the CLI can cap BLAS thread counts
before numpy loads (see ``attentab.cli``).
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "autodiff",
    "container",
    "data",
    "errors",
    "losses",
    "synthetic",
    "tabnet",
    "train",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
