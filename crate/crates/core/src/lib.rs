//! Significant-wave-height forecasting from NDBC buoy records.
//!
//! The crate is organised as a pipeline of small, independently testable
//! stages:
//!
//! * [`ndbc`] parses NDBC standard-meteorological files into a
//!   [`TimeSeriesTable`] and optionally fetches them over HTTP.
//! * [`preprocess`] fills gaps by distance-weighted linear interpolation,
//!   encodes periodic angles as `(x_new, x_sign)` pairs and min-max scales.
//! * [`stl`] is a LOESS smoother plus the seasonal-trend decomposition built
//!   on it.
//! * [`spectral`] holds a radix-2 FFT, the naive DFT it is checked against,
//!   global spectrum peaks and a Hann-windowed STFT.
//! * [`features`] assembles decomposed and spectral columns and windows them
//!   into supervised samples.
//! * [`nn`] is a small tape-based autodiff engine with the layers the
//!   network needs; [`model`] builds, trains and runs the TCN-LSTM.
//! * [`metrics`] and [`experiment`] evaluate runs and orchestrate ablations.
//!
//! The `book/` directory next to the workspace root walks through each stage;
//! its code listings are compiled and run as doctests of this crate.

pub mod error;
pub mod experiment;
pub mod features;
pub mod metrics;
pub mod model;
pub mod ndbc;
pub mod nn;
pub mod preprocess;
pub mod spectral;
pub mod stl;
pub mod synthetic;

pub use error::{Error, Result};
pub use ndbc::{Feature, StationMeta, TimeSeriesTable};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/ingest.md")]
    mod ingest {}
    #[doc = include_str!("../../../book/src/preprocess.md")]
    mod preprocess {}
    #[doc = include_str!("../../../book/src/stl.md")]
    mod stl {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
