//! LISTA-family unrolled networks: parameters, analytic initialization,
//! forward passes (plain and recorded), progressive training and the NMSE
//! metric.

mod forward;
mod metric;
mod params;
mod train;

pub use forward::{
    forward, forward_final, forward_prefix, layer_step, record_layer, threshold, LayerVars, TapeOperands,
};
pub use metric::{nmse_db, suite_nmse_db, NMSE_FLOOR_DB};
pub use params::{
    alista_weight, analytic_init, Layer, SupportSchedule, UnrolledParams, Variant, ALISTA_GRAM_RIDGE, DEFAULT_DEPTH,
};
pub use train::{suite_loss, train_progressive, train_stages, TrainConfig, TrainLogRow, TrainLoss, TrainOutcome};

use crate::error::Result;
use crate::problems::SparseRecoverySuite;

/// Suite NMSE (dB) after each layer `1..=K`.
pub fn layerwise_nmse_db(params: &UnrolledParams, suite: &SparseRecoverySuite) -> Result<Vec<f64>> {
    forward(params, &suite.b)?
        .iter()
        .map(|x| suite_nmse_db(x, &suite.x_star))
        .collect()
}
