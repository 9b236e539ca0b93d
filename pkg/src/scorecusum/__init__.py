"""Score-based CUSUM change detection with denoising score matching."""

from .errors import DataError, InputError, NumericError, ScoreCusumError, TrainingDivergedError
from .statistics import GmmSpec, hyvarinen_score, increment
from .scorenet import ScoreModel, TrainConfig, dsm_grad, dsm_loss, init_model, online_update, train_offline
from .detector import DetectorState, RunRecord, run_offline, run_online, step
from .calibration import CalibrationConfig, calibrate_threshold, estimate_arl, estimate_wadd, tradeoff_curve
from .datagen import gen_nn_dataset, ring_gmm_spec, sample_gmm
from .methods import METHODS, MethodSpec, build_method

__version__ = "0.1.0"
