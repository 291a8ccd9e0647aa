"""Separable k-t reconstruction: FE-row splitting, classical and unrolled solvers."""
from .tensor import (Axis, ComplexTensor, Domain, IMAGE_AXES, KSPACE_AXES, KTSlice2D, KTVolume,
                     load_tensor, save_tensor, split_rows, stitch_rows)
from .operators import (CoilMaps, SamplingMask, adjoint_A, apply_mask, coil_combine, coil_expand,
                        adjoint_volume, encode_volume, fft1d, forward_A, hybridize, ifft1d)
from .sampling import MaskSpec, audit_mask, gen_random_kt, gen_vista_like, generate_mask
from .phantom import PhantomSpec, cardiac_spec, gen_coil_maps, gen_phantom, simulate_acquisition
from .classical import ClassicalConfig, solve_classical, solve_classical_volume
from .metrics import MetricReport, evaluate, psnr, rlne, ssim

__version__ = "0.1.0"
