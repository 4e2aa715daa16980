//! Radio-map based transmission-rate selection under sensing-location
//! uncertainty.
//!
//! A Gaussian process regresses the shadowing around a log-distance path-loss
//! mean from crowdsensed power reports whose positions are noisy. The
//! noisy-input variants convert that position noise into extra output
//! variance (first order via the gradient of the posterior mean, second order
//! additionally via its Hessian). Each predictive belief is turned into the
//! largest rate meeting an outage target, and a Monte-Carlo harness measures
//! the resulting outage and received-rate statistics.

pub mod channel;
pub mod cli;
pub mod config;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod montecarlo;
pub mod output;
pub mod rate;
pub mod selftest;

pub use channel::{ChannelParams, Point2};
pub use config::{parse_config, ExperimentConfig, RunConfig};
pub use error::{Error, Result};
pub use gp::{FitOptions, FittedModel, GpMethod, LocationNoiseScale, NoiseParams, Posterior, SensingDataset};
pub use kernel::{Grad2, Hess2, KernelHyper};
pub use montecarlo::{Method, SimConfig, TrialRecord};
pub use rate::{RateConfig, RateDecision};
