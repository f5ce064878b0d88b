//! Non-pooling layers of the classifier: convolution, ReLU, fully connected,
//! dropout and the softmax cross-entropy head.

mod conv;
mod dense;
mod dropout;
mod relu;
mod softmax_xent;

pub(crate) use conv::conv2d_param_grads;
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvLayer};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseLayer};
pub use dropout::{dropout_backward, dropout_forward, DropoutState};
pub use relu::{relu_backward, relu_forward, ReluMask};
pub use softmax_xent::{softmax_xent_backward, softmax_xent_forward};
