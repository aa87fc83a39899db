"""
Game app

Purpose: The two-cluster synchronization game. Payoff functions, the
feasibility rules on utilities and abort costs, the wait-or-run-local
decision rule, and exhaustive enumeration of the three-pass game tree.
"""
