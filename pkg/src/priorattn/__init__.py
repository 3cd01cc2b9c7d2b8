"""Prior attention for controllable sequence transduction.

A numpy reverse-mode autodiff core, an LSTM encoder-decoder with bilinear
attention, a conditional VAE that generates whole attention matrices from a
latent code, simplification metrics, and the file formats tying them together.
"""

__version__ = "0.1.0"
