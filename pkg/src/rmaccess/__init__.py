"""Grant-free access over second-order Reed-Muller sequences.

Codec, per-slot detector with successive interference cancellation, frame
pipeline with tree-coded sub-blocks, stochastic geometry channel model, and
a Monte Carlo command-line harness.
"""

from .access_pipeline import (
    ErrorMetrics,
    FrameConfig,
    FrameDecodeResult,
    MessagePayload,
    assign_slots,
    decode_frame,
    draw_messages,
    encode_payload,
    error_metrics,
    tree_decode,
    tree_encode,
)
from .geometry_channel import (
    DeviceRealization,
    GeometryConfig,
    SlotObservation,
    classify_neighbors,
    expected_neighbors,
    frame_observations,
    interference_power,
    sample_frame,
    synthesize_slot,
    time_domain_reference,
)
from .rm_codec import (
    BitLayout,
    Codeword,
    RmPair,
    binary_index,
    bits_to_int,
    bits_to_pair,
    generate_sequence,
    pack_bits,
    pair_to_bits,
    unpack_bits,
    wht,
)
from .sim_cli import ExperimentSpec, main, presets, run_sweep, scaling_bench
from .slot_detector import (
    Detection,
    DetectorConfig,
    cancel,
    detect_slot,
    fold_layer,
    refine_delay,
    reconstruct_signal,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # codec
    "RmPair",
    "Codeword",
    "BitLayout",
    "binary_index",
    "bits_to_int",
    "bits_to_pair",
    "pair_to_bits",
    "generate_sequence",
    "pack_bits",
    "unpack_bits",
    "wht",
    # detector
    "Detection",
    "DetectorConfig",
    "detect_slot",
    "cancel",
    "fold_layer",
    "refine_delay",
    "reconstruct_signal",
    # frame pipeline
    "FrameConfig",
    "MessagePayload",
    "FrameDecodeResult",
    "ErrorMetrics",
    "tree_encode",
    "tree_decode",
    "assign_slots",
    "draw_messages",
    "encode_payload",
    "decode_frame",
    "error_metrics",
    # geometry and channel
    "GeometryConfig",
    "DeviceRealization",
    "SlotObservation",
    "expected_neighbors",
    "interference_power",
    "sample_frame",
    "classify_neighbors",
    "synthesize_slot",
    "frame_observations",
    "time_domain_reference",
    # harness
    "ExperimentSpec",
    "run_sweep",
    "scaling_bench",
    "presets",
    "main",
]
