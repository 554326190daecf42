"""
Domain Shift Toolkit

Measures representation shift between image datasets, constructs augmented
datasets with a prescribed shift, and provides the weak-label and evaluation
tools around them.
"""

__version__ = "1.0.0"
__author__ = "Domain Shift Toolkit"
