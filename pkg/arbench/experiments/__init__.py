"""Experiments: training, sample optimization, detection, ARCycle and staged runs."""
