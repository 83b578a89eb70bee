"""Offline bridge from pretrained vision-language models to the splat
engine's binary containers (TGRF feature maps, TGRM mask sets, TGRQ
query embeddings)."""

__version__ = "0.1.0"
