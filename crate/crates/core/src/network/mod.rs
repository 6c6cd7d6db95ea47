//! Layer graphs, training, and checkpoints.

mod checkpoint;
mod layers;
mod model;
mod optim;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
};
pub use layers::{ChannelNorm, Layer, LayerCache, Linear, Mode, ParamGrads};
pub use model::{
    convert_to_cycnn, count_params, mini_vgg, ForwardCache, Gradients, MiniVggConfig, Model,
};
pub use optim::{loss_and_grad, sgd_step, softmax, EarlyStopping, PlateauHalving, Sgd};
pub use train::{
    argmax, evaluate, metrics_csv, train, train_with_progress, EpochMetrics, EvalReport,
    TrainConfig, TrainOutcome,
};
