//! Small numeric kernels with hand-written backward passes.
//!
//! Everything works on [`Tensor`] in `f64`. Time-aware operations take a
//! [`Mask`] and never read or write past an example's valid prefix, so the
//! values stored in end padding cannot influence any output or gradient.

pub mod activation;
pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use activation::{Activation, SELU_ALPHA, SELU_LAMBDA};
pub use conv::{conv1d_causal, conv1d_causal_backward, conv_transpose1d, conv_transpose1d_backward};
pub use layers::{
    apply_channel_mask, channel_dropout, channel_dropout_mask, dense, dense_backward, global_avg_pool_masked,
    global_avg_pool_masked_backward, softmax, softmax_backward, DropoutMask, SeBlock, SeCache, SeShape, Squeeze,
};
pub use loss::{
    l1l2_grad, l1l2_penalty, masked_mse, weighted_cross_entropy, weighted_cross_entropy_logit_grad,
    DEFAULT_LOSS_WINDOW,
};
pub use optim::{adam_step, cyclical_lr, AdamConfig, AdamState, CyclicalLr};
pub use tensor::{Mask, Parameter, Tensor};
