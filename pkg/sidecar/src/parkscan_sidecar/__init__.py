"""Inference sidecar speaking the parkscan detector wire protocol.

The pipeline talks to this process over newline-delimited JSON on stdio
or one HTTP POST per request; nothing else crosses the boundary, so the
model framework living here never leaks into the pipeline package.
"""

from parkscan_sidecar.protocol import HANDSHAKE_REPLY, TASKS
from parkscan_sidecar.serve import SidecarConfig, serve
from parkscan_sidecar.stub import StubError, stub_model

__all__ = ["HANDSHAKE_REPLY", "TASKS", "SidecarConfig", "StubError", "serve", "stub_model"]
