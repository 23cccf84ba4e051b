//! Dense tensors and the hand-differentiated primitives of the restoration
//! network.

pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod mae;
pub mod ssim;
pub mod tensor;

pub use adam::{learning_rate, AdamState};
pub use conv::ConvGeometry;
pub use layers::Param;
pub use mae::masked_mae;
pub use ssim::{ssim, ssim_with_grad};
pub use tensor::Tensor;
