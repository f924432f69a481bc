"""Top-level package for pivot-align."""


__author__ = """pivot-align developers"""
__email__ = 'dev@pivot-align.invalid'
__version__ = '0.1.0'
