"""collisim: collision-statistics estimation of density-matrix moments.

Simulates single-setting randomized-measurement experiments and turns the
resulting collision counts into estimates of Tr(rho^t), Tr(O rho^t), and
partial-transpose moments, with the entanglement witnesses built on top.
"""

__version__ = "0.1.0"
