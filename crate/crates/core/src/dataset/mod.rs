//! Data ingestion and preprocessing.

pub mod har;
pub mod pca;
pub mod synthetic;

pub use har::{load_har, load_har_split, parse_har, write_har_split, HarData, SessionGrouping, Split};
pub use pca::{fit_pca, PcaProjection};
pub use synthetic::{generate_synthetic, lift_to_ambient, random_model, RandomModelSpec};
