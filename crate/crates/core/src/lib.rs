//! Hub-height wind speed estimation at unmonitored sites.
//!
//! The workflow has two statistical stages:
//!
//! 1. **Vertical extrapolation** ([`shear`]): a per-station penalized additive
//!    model maps the square root of the 10 m wind (plus height, hour of day and
//!    direction) to the square root of the wind at hub height. Its residual
//!    variance is carried forward as observation noise.
//! 2. **Spatial interpolation** ([`spatial`]): the square-root hub-height
//!    estimates at stations are treated as noisy replicates of a latent
//!    Matérn (ν = 1) Gaussian process whose mean follows a climatological
//!    covariate. Hyperparameters are fitted per calendar month by maximum
//!    likelihood and predictions at target sites come from exact kriging.
//!
//! Supporting modules cover Weibull quantile mapping and profile densification
//! ([`distrib`]), validation metrics and the reanalysis-style baseline
//! ([`eval`]), and a synthetic world generator with known truth ([`synth`]).

pub mod distrib;
pub mod domain;
pub mod error;
pub mod eval;
pub mod optim;
pub mod shear;
pub mod spatial;
pub mod special;
pub mod synth;

pub use domain::{GeoLocation, HeightLevel, TimeStamp, WindSample};
pub use error::{Error, Result};
