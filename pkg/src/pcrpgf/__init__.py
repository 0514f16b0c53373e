"""Exact distributions and likelihoods for PCR branching-process models of STR profiles."""

from importlib import resources

__version__ = "0.1.0"


def _data(name: str):
    return resources.files(__name__).joinpath("data", name)


def default_kit():
    """Synthetic 16-locus kit shipped with the package."""
    from . import io

    with resources.as_file(_data("kit.csv")) as p:
        return io.load_kit(p)


def default_frequencies():
    from . import io

    with resources.as_file(_data("frequencies.csv")) as p:
        return io.load_frequencies(p)


def default_profiles():
    from . import io

    with resources.as_file(_data("profiles.csv")) as p:
        return io.load_profiles(p)


def default_noise():
    from . import io

    with resources.as_file(_data("noise.csv")) as p:
        return io.load_noise(p)
