"""Crease classification on implicit surfaces and 2D-3D graph-surface
registration of a projected classifier image."""

from .camera import Camera, check_no_self_occlusion, jacobian, project
from .classifier import (Annotation, ClassifierParams, classify_volume,
                         g_beta, rasterize_annotation, surface_classifier,
                         zero_moment_shift)
from .energy import (DeformationField, EnergyReport, gradient, match_energy,
                     reg_energy, total_energy)
from .errors import (ExtractionError, NumericalError, OutOfDomainError,
                     StallError, ValidationError)
from .fem import FemOperators, assemble_fem, discrete_laplacian
from .fields import (BinaryMask3, Field2, ScalarField3, load_image, load_mask,
                     load_volume, sample_trilinear, write_image, write_volume)
from .fmm import redistance_fmm
from .optimizer import (DescentConfig, RunTrace, cascadic_register,
                        descend_level, prolongate, restrict)
from .surface import GraphSurface, area_element, extract_graph, laplacian_z
from .testbed import (ErrorMetrics, SceneParams, SyntheticScene,
                      evaluate_registration, make_ground_truth_deformation,
                      make_scene, make_synthetic_surface,
                      render_projected_classifier, surface_error)

__version__ = "0.1.0"
