"""
Clustering app

Purpose: Group workers by execution progress with DBSCAN over trace windows,
split the result into the fast and slow clusters that play the sync game,
and score cluster quality (adjusted Rand index, intra/inter distances).
"""
