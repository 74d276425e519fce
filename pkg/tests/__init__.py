"""
ScoreDVI Test Suite

Test suite for ScoreDVI functionality.
"""
