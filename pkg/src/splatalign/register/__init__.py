from .icp import CoarseResult, IcpConfig, coarse_align, coarse_align_detailed, icp, sample_dispersed_rotations
from .shape import ShapeSolverConfig, anisotropic_regularized, anisotropic_svd
from .similarity import RansacConfig, ransac_umeyama, umeyama
from .align import AlignConfig, AlignResult, IterSchedule, iterative_align, mean_residual
