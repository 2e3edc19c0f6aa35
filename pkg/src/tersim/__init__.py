"""Desk-scale simulator of a robot-based tele-echography system."""

from .kinematics import (Pose, Workspace, CableRig, CableLengths,
                         FineStageLimits, clamp_to_workspace,
                         inverse_kinematics, forward_kinematics, step_toward)
from .phantom import (PhantomConfig, Aneurysm, Thrombus, UsFrame, GroundTruth,
                      radius_profile, ground_truth, surface_height,
                      render_frame, caliper_measure, grade_estimate)
from .netchannel import Channel, ChannelParams
from .session import (Scenario, Station, MeasurementSpec, SessionConfig,
                      MasterEndpoint, SlaveEndpoint, run_session)
from .stats import (pearson_r, cohen_kappa, weighted_kappa, relative_errors,
                    abs_diff_buckets, paired_t_test, icc_2_1, ExamRecord,
                    campaign_report)

__version__ = "0.1.0"
