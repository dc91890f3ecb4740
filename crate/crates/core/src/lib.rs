//! Multi-modal place recognition on the unit sphere.

pub(crate) mod binio;
pub mod config;
pub mod dataset;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod formats;
pub mod grid;
pub mod kdtree;
pub mod map_store;
pub mod pipeline;
pub mod pose;
pub mod projection;
pub mod quad;
pub mod sht;
pub mod spectra;
pub mod synth;
pub mod taper;
pub mod voting;

pub use error::{Error, Result};
pub use grid::{Channel, SphericalGrid};
pub use projection::{assemble_feature, project_cameras, project_lidar, FeatureSphere, PointCloud};
pub use sht::{forward_sht, inverse_sht, yaw_rotate, ShtPlan, Spectrum};
pub use taper::{MultitaperAnalyzer, TaperBank};
