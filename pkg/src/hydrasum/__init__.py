"""hydrasum: one encoder, k decoders, and a learned gate over their mixture."""

__version__ = "0.1.0"

CHECKPOINT_FORMAT = "hydra-ckpt-1"
SEED_ENV_VAR = "HYDRA_SEED"
