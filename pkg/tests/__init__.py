"""
Tests for dkldiag: numerical checks of the models and samplers, and end-to-end runs of the harness and CLI.
"""
