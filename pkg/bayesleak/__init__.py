"""bayesleak measures how much of a training input leaks through a (defended) gradient, using the Bayes optimal adversary and its gradient-matching special cases."""

__version__ = "1.0.0"

import os
from pathlib import Path

# set environment variable for bayesleak package directory
os.environ["BAYESLEAK_PACKAGE_DIR"] = str(Path(__file__).parent)
