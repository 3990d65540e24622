"""Multi-robot coordination under budgeted, event-based communication."""

__version__ = "0.1.0"
