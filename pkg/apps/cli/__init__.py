"""
StreamLab Command Line

Entry point for runs, sweeps, report comparison and micro-benchmarks.
"""
