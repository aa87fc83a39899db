"""
Scheduler app

Purpose: Fix the three sync options of an iteration from the fast and slow
cluster models. Each option gets its sync time, per-cluster availability
thresholds, the percentiles behind them and the lateness bounds workers
check their progress against.
"""
