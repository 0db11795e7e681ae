"""Desk-scale O-RAN control plane.

An E2 protocol stack (E2AP plus KPM/RC/NI service models), a near-RT RIC
hosting xApps, a non-RT RIC with A1 policies and enrichment information,
a deterministic simulated RAN of slice-scheduling DUs, and the AI/ML
workflow driving a closed-loop RAN-slicing controller.
"""

__version__ = "0.1.0"
