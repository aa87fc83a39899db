"""
Experiments app

Purpose: Operator surface of the toolkit. Parses experiment documents,
ingests and writes trace CSVs, runs sweep cells across synchronizers in a
process pool, writes long-format result tables and plots, and tracks
queued runs through the ExperimentRun model, a django-q task and the API.
"""
