"""Volumetric remote-assistance streaming engine.

Hardware-free implementation of an RGB-D telepresence pipeline: synthetic
and replayed frame sources, change-based depth compression, a raw color
codec behind a pluggable interface, camera-space reconstruction, two-way
anchored annotations, a deterministic peer-to-peer network simulator, and
end-to-end latency/bandwidth metrics, plus a live gateway for a browser
viewer.
"""

__version__ = "0.1.0"

from .annotation import AnnotationOp, AnnotationState, GestureEvent, OpKind, Role
from .depth_codec import CodecState, DepthCodecConfig, EncodedDepthMessage
from .frames import (
    CameraIntrinsics,
    CircularPath,
    ColorFrame,
    DepthFrame,
    SyntheticSceneConfig,
    record_sink,
    replay_source,
    synthetic_source,
)
from .geometry import Point3, Ray, TriangleMesh
from .session import SessionOutcome, SessionStats, run_simulated_session
from .wire import NetworkProfile

__all__ = [
    "AnnotationOp",
    "AnnotationState",
    "GestureEvent",
    "OpKind",
    "Role",
    "CodecState",
    "DepthCodecConfig",
    "EncodedDepthMessage",
    "CameraIntrinsics",
    "CircularPath",
    "ColorFrame",
    "DepthFrame",
    "SyntheticSceneConfig",
    "record_sink",
    "replay_source",
    "synthetic_source",
    "Point3",
    "Ray",
    "TriangleMesh",
    "SessionOutcome",
    "SessionStats",
    "run_simulated_session",
    "NetworkProfile",
    "__version__",
]
