//! Synthetic oracle scenes.

use thiserror::Error;

pub mod io;
pub mod scene;
pub mod shapes;

pub use io::{read_scene, write_scene, SceneData};
pub use scene::{
    default_camera, morph, random_scene, render_scene, NoiseParams, OracleModel, OracleOptions, OracleScene,
    PlacedObject, SceneSpec,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported file version: {0}")]
    Version(String),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("png error: {0}")]
    Png(String),
    #[error("no index for model {0}")]
    MissingIndex(String),
    #[error("models were indexed with different embedding parameters")]
    ParamsMismatch,
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("render failed: {0}")]
    Render(String),
}
