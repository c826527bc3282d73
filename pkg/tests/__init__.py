"""Test suite for arbench"""
