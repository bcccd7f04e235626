//! Desk-scale fully convolutional segmentation network with dense
//! encoder-decoder blocks, index-passing unpooling, concatenation skips, and
//! a combined dice + edge-weighted cross-entropy loss, trained from scratch
//! in f64 on the CPU.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod net;
pub mod ops;
pub mod segment;
pub mod tensor;
pub mod train;

pub use loss::{edge_map, hard_dice, loss_and_grad, LossConfig, Reduction};
pub use net::{ArchitectureSpec, DropoutPlan, QuickNatLite};
pub use segment::{segment_volume, Segmenter};
pub use tensor::Tensor4;
pub use train::{
    evaluate, metrics_to_csv, overfit_single_pair, train, EpochMetrics, TrainConfig, TrainReport,
    TrainSample,
};
