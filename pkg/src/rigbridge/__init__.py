"""rigbridge: one canonical mesh topology and skeleton for heterogeneous rigs.

Precomputed barycentric topology transfer, closed-form skeleton fitting,
LBS posing with corrective displacements, and pose inversion from posed
vertices (analytical inverse-LBS with Newton-Schulz orthogonalization plus
optional gradient refinement).
"""

from .rig import (
    CorrectivesNet,
    Correspondence,
    Mesh,
    MotionSequence,
    PoseFrame,
    RigAsset,
    Skeleton,
    SkeletonState,
    SkinningWeights,
    REGION_NAMES,
)
from .io import load_motion, load_obj, load_rig, save_motion, save_obj, save_rig
from .bvh import TriangleBVH, build_bvh
from .transfer import apply_correspondence, precompute_correspondence, solve_tet_barycentric
from .skeleton_fit import (
    JointRegressor,
    build_joint_regressor,
    fit_joint_rotations,
    fit_skeleton,
    kabsch_rotation,
    regress_joints,
)
from .animation import (
    GlobalTransforms,
    apply_correctives,
    bind_inverse_transforms,
    derive_corrective_masks,
    forward_kinematics,
    lbs_pose,
    pose_mesh,
    replicate_masks,
)

__version__ = "0.1.0"
