//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Result`]. Variants are
//! grouped by failure mode rather than by module so callers can match on the
//! kind of problem (bad input file, out-of-range id, impossible shape, ...)
//! without caring which layer detected it.

use thiserror::Error;

/// Errors produced by graph loading, table construction, tokenization,
/// training, and experiment orchestration.
#[derive(Debug, Error)]
pub enum Error {
    /// A text input could not be parsed. Carries the file path (or a pseudo
    /// path for in-memory sources) and the 1-based line number.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A node id fell outside the graph's node set.
    #[error("node id {id} out of range for graph with {nodes} nodes")]
    NodeRange { id: usize, nodes: usize },

    /// A label value fell outside `0..class_count`.
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: i64, classes: usize },

    /// Dimensions of related inputs disagree (feature rows vs. node count,
    /// vector lengths, matrix shapes, ...).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value is invalid on its own (probability outside
    /// [0, 1], zero branching factor, empty split, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The graph structure cannot support the requested operation
    /// (degree-0 node hit by an averaging recursion, empty hop set, ...).
    #[error("degenerate structure: {0}")]
    Degenerate(String),

    /// A numeric domain violation (non-finite input, zero normalizer, no
    /// differing-label pair to estimate from, ...).
    #[error("numeric domain error: {0}")]
    Domain(String),

    /// An underlying I/O failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Convenience constructor for [`Error::Io`].
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
