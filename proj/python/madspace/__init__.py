"""Minimum-action-distance state embeddings, latent planning and reward shaping."""

from ._madspace import *  # noqa: F401,F403
from ._madspace import __doc__  # noqa: F401
