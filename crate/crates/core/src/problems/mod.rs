//! Testbed generators and objectives: sparse recovery, LASSO, the
//! Rastrigin family and MLP training.
//!
//! Every generator is a pure function of its random stream and arguments.

mod lasso;
mod mlp;
mod rastrigin;
mod sparse;

pub use lasso::{lasso_value_and_subgrad, LassoProblem, LassoSuite, DEFAULT_LAMBDA};
pub use mlp::{
    encode_idx, mlp_loss_and_grad, synthetic_digits, Activation, Batch, ImageDataset, MlpTask, IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC, IMAGE_PIXELS, NUM_CLASSES,
};
pub use rastrigin::{gen_rastrigin_suite, rastrigin_value_and_grad, RastriginInstance, DEFAULT_ALPHA};
pub use sparse::{
    gen_measurement_matrix, gen_sparse_instances, measured_snr_db, sample_sparse_signal, MatrixKind,
    SparseRecoveryInstance, SparseRecoverySuite, SPARSITY,
};
