"""
Simulator app

Purpose: Deterministic discrete-event simulation of workers running a task
graph under FastSync and the ASP, BSP, SSP and DSSP baselines. Owns the
event engine, the message-cost network with partitions, synthetic trace
generation, the FastSync controller loop and metric aggregation.
"""
