"""Knowledge-graph triple alignment by learned edit distance in embedding space."""

__version__ = "0.1.0"
