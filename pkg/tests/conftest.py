"""Session fixtures: phantoms that several test modules share."""

import pytest

import helpers
from retreg import phantom as ph


@pytest.fixture(scope="session")
def clean_tree_phantom():
    """Noise-free 512 px phantom with 12 junction trees and no web."""
    spec = helpers.tree_only_spec(layout_seed=1)
    image, truth = ph.render(spec)
    return spec, image, truth


@pytest.fixture(scope="session")
def clean_tree_paths(clean_tree_phantom, tmp_path_factory):
    """The clean phantom written to disk once for CLI-level tests."""
    from retreg.imgio import save_png

    _spec, image, _truth = clean_tree_phantom
    root = tmp_path_factory.mktemp("phantom")
    path = root / "tree.png"
    save_png(path, image)
    return path
