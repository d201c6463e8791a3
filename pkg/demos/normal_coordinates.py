"""Normal coordinates on a curved pseudo-Riemannian chart.

Run: python demos/normal_coordinates.py
"""
import numpy as np

from harmaplab.geometry import (chart_constants, christoffel_field, normal_coordinates, parse_chart,
                                pullback_metric)

chart = parse_chart("eta-plus-quadratic p=1 q=1 scale=0.2 seed=0 width=0.5")
base = np.array([0.1, 0.1])
print(f"chart {chart.name!r}, signature {chart.signature}")
print("metric at the base point:\n", chart.h(base))

# Normal coordinates: an affine change A, then a quadratic correction,
# chosen so the metric is eta and the Christoffel symbols vanish at 0.
ncm = normal_coordinates(chart, base)
origin = np.zeros(2)
print("pulled-back metric at 0:\n", pullback_metric(chart, ncm, origin))
print("largest Christoffel symbol at 0:", np.abs(christoffel_field(ncm.pulled_back_chart(), origin)).max())
print("validity radius (Newton inverse succeeds):", ncm.validity_radius)

# Away from 0 the symbols grow linearly; C_Gamma is the measured slope.
consts = chart_constants(chart, ncm, 0.2)
print(f"C_Gamma on the 0.2 ball: {consts.C_Gamma:.4f}")
