//! LeNet-scale CNN with a global-average-pooling head, hand-written
//! forward/backward passes, and differentiable CAM.

mod cam;
mod checkpoint;
mod conv;
mod linear;
mod model;
mod pool;

pub use cam::{cam, cam_from_features, SaliencyMap, DEFAULT_CAM_EPS};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use conv::{conv2d_apply, conv2d_backward, conv2d_forward, Conv2dParams, ConvCache};
pub use linear::{linear_backward, linear_forward, LinearParams};
pub use model::{
    model_backward, model_forward, model_infer, ForwardCache, ModelParams, FEATURE_CHANNELS,
    IMAGE_SIDE, INPUT_CHANNELS, NUM_CLASSES,
};
pub use pool::{
    gap_backward, gap_forward, maxpool2d_backward, maxpool2d_forward, relu_backward, MaxPoolCache,
    FEATURE_SIDE,
};
