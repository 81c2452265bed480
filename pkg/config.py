"""Global configuration, constants, enums."""

from enum import Enum


class ModelKind(Enum):
    OVRV = "ovrv"
    NN = "nn"
    PINN = "pinn"
    RACER = "racer"


class ScenarioKind(Enum):
    OSCILLATORY = "oscillatory"
    LOW_SPEED_STEPS = "low_speed_steps"
    HIGH_SPEED_STEPS = "high_speed_steps"
    DIPS = "dips"


class GapSetting(Enum):
    MIN_GAP = "min_gap"
    MAX_GAP = "max_gap"


class Constraint(Enum):
    SPEED = "speed"                  # da/dv <= 0
    SPACING = "spacing"              # da/ds >= 0
    RELATIVE_SPEED = "rel"           # da/dr >= 0


# Column order of a state vector everywhere: (s, dv, v)
STATE_FEATURES = ("spacing", "relative_speed", "speed")
# RDC gradients are reported as (da/dv, da/ds, da/dr). da/dv holds the lead
# speed fixed, so it includes the -da/dr term through dv = v_lead - v.
RDC_GRADIENT_NAMES = ("dv", "ds", "dr")

TRAJECTORY_COLUMNS = ["t", "lead_speed", "follow_speed", "spacing"]
HISTORY_COLUMNS = ["epoch", "train_loss", "val_loss", "p_speed", "p_spacing", "p_rel"]
ROLLOUT_COLUMNS = ["t", "spacing_sim", "speed_sim", "accel_sim", "spacing_true", "speed_true"]
AUDIT_COLUMNS = ["idx", "dv", "ds", "dr", "viol_speed", "viol_spacing", "viol_rel"]

# Dataset construction
DATA_DEFAULTS = {
    "dt": 0.1,                      # 10 Hz capture
    "seq_len": 10,                  # 1.0 s of history in X_seq
    "accel_window": 0.1,            # forward-difference window (s)
    "smoothed_accel_window": 0.5,   # smoothed acceleration protocol
    "split_ratios": (0.8, 0.1, 0.1),
    "ratio_tolerance": 1e-9,
    "kinematic_tolerance": 1e-9,    # |ds - dv*dt| for generated data
    "max_generated_accel": 10.0,    # |a| bound guaranteed by the generator
}

# Calibrated OVRV parameters for the two ACC gap settings: (k1, k2, tau, eta)
OVRV_PRESETS = {
    GapSetting.MIN_GAP: (0.052, 0.236, 0.796, 13.836),
    GapSetting.MAX_GAP: (0.018, 0.105, 2.489, 0.0003),
}

CALIBRATION_PARAMS = {
    "init": (0.05, 0.2, 1.0, 5.0),
    "budget": 5000,
    "tolerance": 1e-10,             # simplex objective spread and vertex spread
    "restarts": 2,                  # fresh simplex around the best point after convergence
}

# Desk-scale network; the full-size configuration is 5 x 64 LSTM units
NETWORK_DEFAULTS = {
    "lstm_layers": 2,
    "lstm_units": 32,
    "seq_head_sizes": (16,),        # dense layers on the final hidden state
    "phy_hidden_sizes": (32, 32),   # tanh layers on X_phy, then a linear scalar head
    "phy_activation": "tanh",
    "seq_activation": "tanh",
    "init_seed": 0,
}

SMOOTH_ACTIVATIONS = ("tanh", "sigmoid", "linear")

TRAIN_DEFAULTS = {
    "learning_rate": 1e-3,
    "batch_size": 64,
    "max_epochs": 200,
    "patience": 20,
    "seed": 0,
    "rdc_weights": (1.0, 1.0, 1.0),
    "alpha": 0.5,
    "alpha_grid": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    "adam_betas": (0.9, 0.999),
    "adam_eps": 1e-8,
}

SIM_DEFAULTS = {
    "min_speed": 0.0,               # ACC vehicles do not reverse
    "crash_spacing": 0.0,           # s <= this is a collision
}

AUDIT_DEFAULTS = {
    "tolerance": 0.0,
    "chunk_size": 512,              # samples per tape when auditing neural models
    "grid_points": 11,
}

# Scenario generation: ~10 minutes per regime at 10 Hz
SCENARIO_DEFAULTS = {
    "duration": 600.0,
    "noise_std": 0.0,
    "seed": 0,
    "setting": GapSetting.MIN_GAP,
    "step_ramp": 2.0,               # seconds of smoothing on staircase transitions
    "min_step_hold": 30.0,          # each staircase level lasts at least this long
}

# Field-data RMSE anchors (acceleration m/s^2, speed m/s, spacing m); None = crash.
# Used only as ordering targets; the field dataset is not bundled.
REFERENCE_RMSE = {
    "min_gap": {
        "racer": (0.204, 0.09, 0.261),
        "ovrv": (0.208, 0.17, 1.47),
        "nn": (0.209, 0.125, 0.305),
        "pinn": (0.207, 0.114, 0.272),
    },
    "max_gap": {
        "racer": (0.221, 0.081, 0.394),
        "ovrv": (0.614, 1.839, 22.761),
        "nn": None,
        "pinn": (0.227, 0.268, 2.573),
    },
    "smoothed": {
        "racer": (0.099, 0.152, 0.298),
        "ovrv": (0.111, 0.173, 1.485),
        "nn": (0.115, 0.237, 0.559),
        "pinn": (0.111, 0.322, 0.415),
    },
}
