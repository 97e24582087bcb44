"""
L1 Dictionary Learning Toolkit
Sharp local minimum test, DL-BCD recovery and simulation harness
"""

__version__ = "1.0.0"
