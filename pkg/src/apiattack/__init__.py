"""Rate-limited black-box classifier attack lab: extraction, GAN augmentation,
poisoning and evasion against a mock classification API."""

__version__ = "0.1.0"
