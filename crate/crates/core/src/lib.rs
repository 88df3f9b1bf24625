pub mod besov;
pub mod chaos;
pub mod covariance;
pub mod error;
pub mod experiments;
mod fft;
pub mod field;
pub mod geom;
pub mod io;
pub mod moments;
pub mod rng;
pub mod scaling;
pub mod tail;
pub mod whitenoise;
pub mod zoom;

pub use error::{Error, Result};
