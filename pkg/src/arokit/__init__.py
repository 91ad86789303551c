"""arokit: compositional probe datasets and order-sensitivity evaluation for dual encoders.

Builds relation/attribution test cases from scene graphs, generates order
perturbations of captions and images, evaluates embedding-based matching and
retrieval, and trains projection heads with a hard-negative contrastive
objective.
"""

__version__ = "0.1.0"
