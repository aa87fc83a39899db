"""
fastsync Django project.

Game-theoretic synchronization simulation toolkit.
"""
