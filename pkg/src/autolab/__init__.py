"""autolab: a desk-scale virtual lab-automation rack.

Virtual SCPI source-measure unit and XY stage served over TCP, a snake-raster
photocurrent scan engine, the sandboxed LabScript DSL, and an LLM agent loop
with human approval gating.
"""

__version__ = "0.1.0"
