"""
Stats app

Purpose: Gaussian and two-component mixture algebra used to model how long
workers take per iteration. Quantiles, CDFs, sums, clamped sampling and
mixture fitting from execution traces.
"""
