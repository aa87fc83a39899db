"""
Protocol app

Purpose: The per-worker runtime of the three-option sync protocol. A pure
state machine stepping each worker through its options, lateness
self-detection at the half-way checkpoint and bounded late notifications
that embed earlier ones.
"""
