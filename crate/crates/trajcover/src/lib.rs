//! File formats, experiment orchestration and the command-line interface
//! around `trajcover-core`.

pub mod cli;
pub mod experiment;
pub mod io;
pub mod numfmt;
pub mod svg;
