//! Recovering Laguerre (power) diagrams from the areas and centroids of
//! their cells, and fitting them to grain maps.

pub mod aniso;
pub mod error;
pub mod fit;
pub mod geom2d;
pub mod ingest;
pub mod io;
pub mod objective;
pub mod sdot;
pub mod svg;
pub mod synth;

pub use error::{Error, Result};
pub use geom2d::{Domain, LaguerreDiagram, Point, Polygon, SeedConfig, WeightVector};
pub use objective::TargetData;
