//! File formats, parallel drivers and the command-line front end for
//! [`transient_core`].

pub mod cli;
pub mod io;
pub mod parallel;
