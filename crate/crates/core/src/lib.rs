pub mod changepoint;
pub mod error;
pub mod fpca;
pub mod function;
pub mod karcher;
pub mod par;
pub mod phase;
pub mod registration;
pub mod simgen;
pub mod warping;
