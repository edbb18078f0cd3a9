pub mod conv;
pub mod elementwise;
pub mod filter;
pub mod gdn;
pub mod likelihood;
pub mod nn;

pub use conv::{conv2d_forward, conv_out_extent, conv_transpose_out_extent};
pub use likelihood::{gaussian_interval_prob, gaussian_symbol_bits, std_normal_cdf};
pub use nn::{softmax_rows, BatchStats, BATCH_NORM_EPS};
