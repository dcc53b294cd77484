pub mod ate;
pub mod cmr;
pub mod data;
pub mod error;
pub mod numkit;
pub mod nuisance;
pub mod report;
pub mod simlab;

pub use error::{Error, Result};
