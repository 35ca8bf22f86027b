"""Exact-arithmetic construction and bounded certification of matrix
realizations of free products and HNN extensions, iterated into finite
stages of a tower of groups with a malnormal subgroup."""

__version__ = "0.1.0"
