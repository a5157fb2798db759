"""Feature-based registration of retinal fundus images.

The package registers pairs of fundus photographs and angiograms by
enhancing the vessel network with a bank of matched filters, segmenting
it with a co-occurrence entropy threshold, extracting vessel
bifurcations as landmark features, matching them by region mutual
information or by geometric invariant descriptors, filtering the
matches by random-sample consensus, and fitting an affine or quadratic
spatial transform used to resample one image onto the other.
"""

from .enhancement import (MODALITY_ANGIOGRAPHY, MODALITY_COLOR,
                          MODALITY_RED_FREE, POLARITY_BRIGHT, POLARITY_DARK,
                          EnhancedImage, FilterBank, build_filter_bank,
                          enhance, extract_working_channel,
                          polarity_for_modality)
from .errors import (BoundsError, ConfigError, DegenerateGeometryError,
                     DegenerateInputError, DegenerateMatchesError, InputError,
                     InsufficientMatchesError, NoFeaturesError,
                     PhantomSpecError, RegistrationNotPossibleError,
                     ResampleFailureError, RetregError,
                     WidthUndeterminedError)
from .features import (BifurcationFeature, bifurcation_candidates,
                       cluster_candidates, density_filter, skeletonize,
                       validate_bifurcation)
from .imgio import load_image, save_pbm, save_png, to_grayscale
from .matching import (InvariantDescriptor, MatchPair, MatchSet, RansacParams,
                       branch_angles, branch_width, classify_angle,
                       combine_invariants, global_entropy, invariants,
                       match_by_invariants, match_by_mi, mutual_information,
                       ransac_inliers, slope_class)
from .phantom import (GroundTruth, JunctionTruth, VesselBranch,
                      VesselTreeSpec, noise_field, normal_stream, render,
                      splitmix64, uniform_stream, warp)
from .pipeline import (FeatureDetection, PipelineConfig, RegistrationReport,
                       detect_features, detect_features_raster, load_config,
                       register_pair)
from .segmentation import (cooccurrence, detect_camera_mask, entropy_curve,
                           entropy_threshold, fill_hollow_vessels,
                           remove_mask, segment, size_filter)
from .transform import (CanvasInfo, Correspondence, TransformModel, apply,
                        estimate, estimate_rigid, estimate_translation,
                        jacobian, resample)

__version__ = "0.1.0"
