//! Coordinatewise LSTM optimizer, the optimizees it can drive, training
//! tricks and truncated-BPTT meta-training.

mod lstm;
mod optimizee;
mod train;
mod tricks;

pub use lstm::{
    lstm_optimizer_step, lstm_step_tape, preprocess_column, preprocess_grad, CoordinateStates, LstmLayer,
    LstmOptimizerParams, LstmVars, TapeStates, DEFAULT_HIDDEN, DEFAULT_KAPPA, DEFAULT_LAYERS, DEFAULT_PREPROCESS_P,
    INPUT_FEATURES,
};
pub use optimizee::{LassoOptimizee, MlpOptimizee, Optimizee, QuadraticOptimizee};
pub use train::{
    lstm_trajectory, meta_train, record_window, MetaLogRow, MetaTrainConfig, MetaTrainOutcome, OptimizeeSampler,
    Tricks, WindowRecord, MAX_NON_FINITE_EPOCHS,
};
pub use tricks::{
    convex_augment, es_smoothed_grads, merge_estimates, progressive_unroll_schedule, random_scaling_wrap,
    ConvexAugmented, ScaledOptimizee, SmoothedGrads,
};
