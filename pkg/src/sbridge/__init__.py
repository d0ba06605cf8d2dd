from .sde import SdeSpec
from .sinkhorn import DiscreteMarginal, run_aipf, run_exact_ipf
from .data import SignalConfig, generate
from .csbi import TrainConfig, train, impute
from .metrics import evaluate

try:
    # see https://effigies.gitlab.io/posts/python-packaging-2023/
    from ._version import __version__
except ImportError:  # pragma: no cover
    # this is a relatively slower method for getting the version string
    from importlib.metadata import version, PackageNotFoundError  # noqa: E402

    try:
        __version__ = version("sbridge")
    except PackageNotFoundError:
        __version__ = "0+unknown"
    del version, PackageNotFoundError
