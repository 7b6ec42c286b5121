//! Two-speed adaptation of data-based dynamical models.
//!
//! The slow path keeps an ensemble of regime models whose outputs are blended
//! by the Mahalanobis proximity of the current input to each member's
//! training inputs. Hotelling T² control charts decide when the ensemble is
//! still trustworthy, when a new operating regime needs a new member, and
//! when the plant itself changed and the ensemble must be rebuilt.
//!
//! The fast path is a per-output Gaussian process, refit online on a
//! sliding window, that predicts the ensemble's next residual and adds it to
//! the ensemble output.
//!
//! The numerical core (`linalg`, `spc`, `base_models`, `slow_learning`,
//! `fast_learning`) is generic over [`Scalar`]; the harness (`plant`,
//! `runtime`, `cli`) runs in `f64`. Concrete aliases live at the crate root.

pub mod base_models;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fast_learning;
pub mod linalg;
pub mod persist;
pub mod plant;
pub mod runtime;
pub mod scalar;
pub mod slow_learning;
pub mod spc;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset = data::Dataset<f64>;
pub type StatProfile = spc::StatProfile<f64>;
pub type ControlChart = spc::ControlChart<f64>;
pub type NarxModel = base_models::NarxModel<f64>;
pub use base_models::NarxConfig;
pub type Ensemble = slow_learning::Ensemble<f64>;
pub use slow_learning::{MonitorVerdict, VerdictTag};
pub type GpHyperparams = fast_learning::GpHyperparams<f64>;
pub type GpWindow = fast_learning::GpWindow<f64>;
pub type GpCompensator = fast_learning::GpCompensator<f64>;

pub type DatasetF32 = data::Dataset<f32>;
pub type StatProfileF32 = spc::StatProfile<f32>;
pub type ControlChartF32 = spc::ControlChart<f32>;
pub type NarxModelF32 = base_models::NarxModel<f32>;
pub type EnsembleF32 = slow_learning::Ensemble<f32>;
pub type GpHyperparamsF32 = fast_learning::GpHyperparams<f32>;
pub type GpWindowF32 = fast_learning::GpWindow<f32>;
pub type GpCompensatorF32 = fast_learning::GpCompensator<f32>;
