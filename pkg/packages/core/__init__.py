"""
StreamLab Core Package

This package contains the core logic of the StreamLab resiliency laboratory:
- graph: logical/physical dataflow graphs and failure-recovery regions
- shuffle: static and adaptive partitioning strategies
- runtime: deterministic discrete-event engine, channels and tasks
- checkpoint: barrier coordination, region merge, snapshot store, lazy restore
- recovery: full/region/single-task recovery and active standby
- autoscale: parallelism controller and safety policies
- control: startup pipeline, leader HA and idempotent submission
- chaos: scripted fault plans
- bench: workloads, metrics, SLO evaluation and micro-benchmarks
"""

__version__ = "1.0.0"
