pub mod autodiff;
pub mod cli;
pub mod data;
pub mod net;
pub mod survival;
pub mod train;
mod fsutil;

pub use fsutil::write_atomic;
