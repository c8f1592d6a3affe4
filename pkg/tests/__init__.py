"""
Tests for gaussproto library.
"""
