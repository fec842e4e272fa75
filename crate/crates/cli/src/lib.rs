//! File formats and the command-line pipeline around `grasptransfer-core`.

pub mod archive;
pub mod commands;
pub mod error;
pub mod files;
pub mod mesh_io;
pub mod view;

pub use archive::ShapeSpaceArchive;
pub use commands::{run, Cli};
pub use error::{CliError, Result};
