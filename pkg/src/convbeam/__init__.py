"""Sparse convolutional beamforming for 3D ultrafast ultrasound."""

from .arrays import (
    ApodizationKind,
    ApodizationMap,
    ElementSet,
    fractal_expand,
    intrinsic_apodization,
    is_full_coarray,
    is_sparse_wrt,
    is_symmetric,
    make_upa,
    named_sparse,
    sum_coarray,
)
from .beamform import CompoundField, ImagingGrid, Method, Volume, coba3d, compound, conv2d_self, das, scoba3d
from .beampattern import AngleGrid, BeamPattern, coba_receive_beam_pattern, pattern_metrics, receive_beam_pattern
from .metrics import contrast_ratio, default_cr_regions, envelope_logcompress, fwhm
from .simulation import Acquisition, IQCube, Phantom, TransmitScheme, make_cyst_phantom, point_phantom, simulate

__version__ = "0.1.0"
