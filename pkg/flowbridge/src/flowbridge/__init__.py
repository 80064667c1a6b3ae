"""Deep-optical-flow exporter producing interchange-format flow files."""

from .bridge import BridgeConfig, export_flows, list_frames, resize_flow, snap8
from .flowio import read_flow_file, write_flow_file

__all__ = [
    "BridgeConfig",
    "export_flows",
    "list_frames",
    "read_flow_file",
    "resize_flow",
    "snap8",
    "write_flow_file",
]
