//! Topological persistence of 1D signals.
//!
//! A signal's sublevel sets `{t : x(t) <= v}` grow as the threshold `v`
//! rises; connected components appear at local minima and merge at interior
//! maxima. Recording the (birth, death) value of every component gives a
//! 0-dimensional persistence diagram, which is then rasterized into a
//! fixed-size persistence image usable as a 2D network input.

mod cache;
mod diagram;
mod image;
pub mod reference;

pub use cache::{load_pi_cache, save_pi_cache, PI_CACHE_MAGIC, PI_CACHE_VERSION};
pub use diagram::{
    sublevel_persistence, PersistenceDiagram, PersistencePoint, SignalWindow,
};
pub use image::{
    diagram_to_image, extract_pi_batch, gaussian_pixel_mass, stacks_to_tensor, PIConfig,
    PersistenceImage, PiStack,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TdaError {
    #[error("empty series")]
    EmptySeries,
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid signal window: {0}")]
    InvalidWindow(String),
    #[error("invalid persistence-image config: {0}")]
    InvalidConfig(String),
    #[error("window {index}: {source}")]
    Window {
        index: usize,
        #[source]
        source: Box<TdaError>,
    },
    #[error("persistence-image cache: {0}")]
    Cache(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
