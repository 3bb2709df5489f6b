"""Transforms, PHY chain, channel models and soft-in/soft-out decoding."""
