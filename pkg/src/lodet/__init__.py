"""Low-rank adaptation experiments for a desk-scale diffusion box detector."""

__version__ = "0.1.0"
