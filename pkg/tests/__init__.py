"""Tests for MEME."""
