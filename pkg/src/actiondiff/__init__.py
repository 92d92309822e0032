"""Desk-scale instructional image manipulation and video prediction.

One latent diffusion backbone serves both tasks: a spatial-only mode edits a
single frame toward an instructed object state, and a spatiotemporal mode
predicts how the action unfolds, with the two behaviours carried by
selectively activated low-rank adapter sets and tuned with structure and
motion consistency rewards against an analytic synthetic world.
"""

__version__ = "0.1.0"
