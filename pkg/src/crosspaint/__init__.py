"""Cross-embodiment visual retargeting: repaint one robot as another, and replay policies across robots."""

__version__ = "0.1.0"
