"""When do two confidence ellipses touch?

Slides one 95% region along the x axis towards another and reports the
minimum over s of K(s). A negative minimum certifies a separating direction;
once the minimum reaches zero the regions meet and the merge rule fires.

    python3 demos/04_overlap_geometry.py
"""

import numpy as np

from spglmm.collapse import ConfidenceRegion, ellipsoid_min_k, regions_overlap

fixed = ConfidenceRegion([0.0, 0.0], [[1.0, 0.6], [0.6, 1.0]], 0.95)
for dx in np.linspace(6.0, 0.0, 13):
    moving = ConfidenceRegion([dx, 0.5], [[0.3, 0.0], [0.0, 0.8]], 0.95)
    s, k = ellipsoid_min_k(fixed, moving)
    state = "overlap" if regions_overlap(fixed, moving) else "apart"
    print(f"dx = {dx:4.1f}   s* = {s:.3f}   min K = {k:+8.3f}   {state}")
