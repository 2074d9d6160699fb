//! Scaling device-aware DNN design optimization to many edge devices.
//!
//! Two approaches are implemented against a simulated device fleet
//! ([`device_world`]) that plays the role of real on-device measurement:
//!
//! * [`proxy_reuse`] trains latency/accuracy predictors on a single proxy
//!   device and, relying on latency rank order being preserved across
//!   devices, finds a design for a new device by bisecting over a single
//!   trade-off weight with a handful of on-device measurements.
//! * [`learn_to_optimize`] trains device-aware predictors and an optimizer
//!   network mapping (device features, trade-off weights) straight to a
//!   design, so a new device costs one forward pass.
//!
//! [`search`] holds the generic minimizers (evolutionary search and the
//! brute-force oracle), [`surrogate`] the from-scratch MLP regressors, and
//! [`harness`] the scenario runner behind the `edgescale` CLI.

pub mod design_space;
pub mod device_world;
pub mod error;
pub mod harness;
pub mod learn_to_optimize;
pub mod par;
pub mod proxy_reuse;
pub mod search;
pub mod surrogate;

pub use design_space::{ContinuousEncoding, DesignPoint, DesignSpace};
pub use device_world::{DeviceFeatures, Fleet, FleetConfig, MeasurementLedger, Metric, Oracle};
pub use error::{Error, Result};
pub use surrogate::{MlpRegressor, PredictorSet, TradeoffWeights};
