"""Certify that multipartite coordination needs a common cause in quantum theory."""

__version__ = "0.1.0"
