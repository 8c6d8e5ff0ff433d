"""Capacity and coordination toolkit for compound channels with an observer.

Modules:

- :mod:`coordcap.types_core`: alphabets, types, kernels, channels
- :mod:`coordcap.info_measures`: entropy, divergence, mutual information
- :mod:`coordcap.typical_sets`: strong typicality and finite-n brackets
- :mod:`coordcap.capacity_solver`: max-min capacity over pre-image polytopes
- :mod:`coordcap.coding_sim`: Monte Carlo random coding
- :mod:`coordcap.cli`: the ``coordcap`` command
"""
__version__ = "0.1.0"
