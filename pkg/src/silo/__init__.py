"""Selective imitation learning from observation-only demonstrations."""
