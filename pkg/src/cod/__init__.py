"""Chain-of-dictionary prompting for LLM machine translation."""

__version__ = "0.1.0"
