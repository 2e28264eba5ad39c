"""Spatial-expansion group transformer encoder for sparse LiDAR voxels."""

from .attention import (AttentionConfig, AttentionParams, embed_positions,
                        group_attention_backward, group_attention_forward)
from .encoder import (BevGrid, EncoderParams, LayerParams, bev_scatter,
                      encoder_forward, segt_layer)
from .model_io import RunConfig, dump_config, init_params, load_config, load_params, save_params
from .spacecurve import (ExpansionConfig, SerializationPlan, Strategy, apply_strategy,
                         gather, hilbert_decode, hilbert_encode, scatter, serialize)
from .voxelizer import DEFAULT_GRID, GridSpec, PointCloud, VoxelSet, voxelize

__version__ = "0.1.0"
