"""Holodeck: immersive VR visualisation stack.

Subsystems: optical marker tracking, capture simulation and replay, the
pose broadcast protocol with latency instrumentation, the spiking-network
scene core, frame-budget LOD, the CAD mesh pipeline, and the service/CLI
layer that wires them together.
"""

__version__ = "0.1.0"
