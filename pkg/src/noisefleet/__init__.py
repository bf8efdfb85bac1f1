"""noisefleet: deterministic acoustic sensor fleet simulation and analysis.

Library + CLI covering the node capture/upload pipeline, the two-server
ingestion tier, fault injection, yield/alert monitoring, and the telemetry
downtime-prediction pipeline (windowing, z-tests, LDA, random forest).
"""

__version__ = "0.1.0"
