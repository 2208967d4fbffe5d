"""Tests for the multical package."""
