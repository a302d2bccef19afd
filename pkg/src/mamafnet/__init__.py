"""Motion-aware multi-attention fusion network for multi-view video classification."""

__version__ = "0.1.0"
