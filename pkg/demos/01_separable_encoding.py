"""
Separable k-t encoding on a cardiac phantom
===========================================

Undersample a small dynamic phantom, then show that one inverse FFT along
the fully sampled FE axis splits the 3-D problem into independent
(PE, TIME) rows.
"""
import numpy as np

from ktsep import (CoilMaps, MaskSpec, adjoint_volume, audit_mask, cardiac_spec, gen_coil_maps,
                   gen_phantom, generate_mask, hybridize, rlne, simulate_acquisition)
from ktsep.rows import zero_filled_volume

# 32 x 32 pixels, 8 frames, 4 coils
spec = cardiac_spec(m=32, n=32, t=8, j=4, seed=1)
image = gen_phantom(spec)
maps = gen_coil_maps(32, 32, 4, seed=1)
print("image", image.extents, "coil maps", maps.shape)

# random k-t sampling at AF 4: same number of PE lines in every frame
mask = generate_mask(MaskSpec(n_pe=32, n_time=8, af=4, seed=2))
print("mask audit", audit_mask(mask))

y = simulate_acquisition(image, maps, mask)

# the 3-D adjoint in one shot
x3d = adjoint_volume(y.data, maps.data, mask.data)

# the same thing row by row after hybridizing along FE
hyb = hybridize(y)
rows = zero_filled_volume(hyb, maps, mask, threads=4)
print("row-wise vs 3-D adjoint, max |diff| =", np.max(np.abs(rows.data - x3d)))
print("zero-filled RLNE =", round(rlne(rows, image), 4))

# a single row is a small problem: (PE, COIL, TIME) data, (PE, COIL) maps
m = 16
print("row", m, "data", hyb.data[m].shape, "maps", CoilMaps(maps.data).row(m).shape)
