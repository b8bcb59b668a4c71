//! Tiny f64 neural-network substrate: layers with explicit backprop and an
//! Adam optimizer. Sized for 32x32 faces on a CPU, checked against finite
//! differences.

mod layers;
mod optim;

pub use layers::{
    l2_normalize, l2_normalize_backward, leaky_relu, leaky_relu_backward, sigmoid,
    sigmoid_backward, tanh, tanh_backward, upsample2x, upsample2x_backward, Conv2d, ConvCache,
    Dense, ParamSlot,
};
pub use optim::{clip_global_norm, Adam};
