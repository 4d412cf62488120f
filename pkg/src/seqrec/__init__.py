"""Sequential recommendation with learnable Bernoulli dropout and contrastive self-supervision."""

__version__ = "0.1.0"
__description__ = "Self-attentive next-item recommender trained jointly with a contrastive objective"
