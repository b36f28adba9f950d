mod conv;
mod elementwise;
mod linalg;
mod reduce;
mod sample;
mod shape;

pub use conv::{conv2d_input_grad, conv2d_kernel_grad};
pub use elementwise::softplus;
pub use sample::SampleGrid;
