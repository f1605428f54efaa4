"""
Experiment harness: configuration, orchestration and artifact output
"""

VERSION = "0.1.0"
