"""Single source of truth for the tool version embedded in artifacts."""

__version__ = "0.1.0"
