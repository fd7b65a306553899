pub mod builders;
pub mod certify;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod gauge;
pub mod instance;
pub mod lp;
pub mod numlin;
pub mod qp;

pub use error::{Error, Result};
