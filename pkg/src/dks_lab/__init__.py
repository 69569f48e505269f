"""dks-lab - Deeply-supervised knowledge synergy at desk scale.

This package provides a small reverse-mode autodiff engine, multi-head residual
networks with auxiliary classifiers, the three-term synergy objective, a training
loop and a numerical verification harness, all driven from the ``dks`` CLI.
"""

__version__ = "0.1.0"
__author__ = "DKS Lab Team"
__license__ = "MIT"

__all__ = ["__author__", "__license__", "__version__"]
