//! Stack-augmented recurrent networks on reverse Polish notation
//! expressions, the plain LSTM baseline they are compared against, and a
//! symbolic executor for fork/stack module programs over scene graphs.

pub mod autodiff;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod rng;
pub mod rpn;
pub mod trainer;
pub mod progexec;
