"""FastAPI service exposing the numerical lab; the CLI is a thin client of
the same handler functions."""

from .app import create_app

__all__ = ["create_app"]
