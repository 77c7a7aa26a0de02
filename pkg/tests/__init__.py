"""Tests for the sdcpse package."""
