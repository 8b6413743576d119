"""HTTP service wrapping the hub."""

from bikit.api.app import create_app

__all__ = ["create_app"]
