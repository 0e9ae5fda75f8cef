use std::path::Path;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point behind camera (z = {z})")]
    BehindCamera { z: f32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate facet {facet}")]
    DegenerateFacet { facet: u32 },

    #[error("{path}:{location}: {msg}")]
    Parse {
        path: String,
        /// Line number for text formats, record index for binary ones.
        location: usize,
        msg: String,
    },

    #[error("{path}: mesh has no texture coordinates (`vt`/`f v/vt` records required)")]
    MissingUvs { path: String },

    #[error("{path}: ASCII PLY is not supported, re-export as binary little-endian")]
    UnsupportedAscii { path: String },

    #[error("camera {name:?}: rotation is not orthonormal (drift {drift})")]
    NonOrthonormalRotation { name: String, drift: f32 },

    #[error("duplicate camera name {name:?}")]
    DuplicateName { name: String },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("missing forward state: {0}")]
    MissingForwardState(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at iteration {iter}")]
    NonFiniteLoss { iter: u32 },

    #[error("frame {frame}: mesh topology does not match the canonical scene")]
    TopologyMismatch { frame: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn parse(path: &Path, location: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            location,
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad input data rather than numerical failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::NonFiniteLoss { .. })
    }
}
