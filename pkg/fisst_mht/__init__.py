"""Top-level package for FISST MHT."""

__author__ = """fisst_mht"""
__email__ = 'fisst-mht@users.noreply.github.com'
__version__ = '0.1.0'

from fisst_mht.core.hypothesis import fisst_step, homht_step
from fisst_mht.core.sim import run, score

__all__ = ['fisst_step', 'homht_step', 'run', 'score']
