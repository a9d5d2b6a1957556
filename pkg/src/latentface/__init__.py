"""latentface: text-guided face image generation and manipulation at desk scale.

A layerwise style latent space shared by image, text, sketch and label
encoders, plus latent-code optimization guided by a text-image similarity
model, exercised end-to-end on a procedural synthetic face dataset.
"""

__version__ = "0.1.0"
