"""Distributed coding of multispectral images from quantized random projections.

Band 0 serves as side information at the decoder; every other band is sent as
syndromes of the bitplanes of its dithered, quantized random measurements and
recovered by belief propagation followed by weighted total-variation
reconstruction.
"""

__version__ = "0.1.0"
