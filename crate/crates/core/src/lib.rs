//! Single-parameterized Kolmogorov–Arnold networks (SKAN) with learnable
//! trigonometric edge functions.
//!
//! Every edge of a layer applies `f(k, x)` with one trainable scalar `k`, and
//! each output node sums its incoming edges. The crate provides the edge
//! functions ([`sfunc`]), the batched kernels ([`linalg`]), the classifier
//! ([`network`]), Adam/SGD ([`optim`]), MNIST loading ([`data`]) and the
//! learning-rate sweep protocol ([`harness`]).
//!
//! ```
//! use skan::{Matrix, SFuncKind, SkanNetwork};
//!
//! let net = SkanNetwork::init(&[4, 3, 2], SFuncKind::LArctan, 0).unwrap();
//! let x = Matrix::from_rows(&[[0.1, 0.2, 0.3, 0.4]]).unwrap();
//! let (logits, _tape) = net.forward(&x).unwrap();
//! assert_eq!(logits.shape(), (1, 2));
//! ```

pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod sfunc;

pub use data::{load_mnist, Dataset, Mnist};
pub use error::{Result, SkanError};
pub use harness::{
    default_lr_grid, select_best, sweep, timing_report, train_run, BestSummary, EpochMetrics, RunRecord, SweepConfig,
    SweepOptions, TimingReport, TrainConfig,
};
pub use linalg::{skan_backward_kernel, skan_forward_kernel, Matrix};
pub use network::{init_network, softmax_cross_entropy, Checkpoint, ForwardTape, SkanLayer, SkanNetwork};
pub use optim::{adam_step, sgd_step, AdamConfig, AdamState};
pub use sfunc::{sfunc_eval, sfunc_grad, SFuncKind};
