//! Command-line harness for the crosswalk simulator: configuration, batch
//! commands, CSV artifacts and SVG plots.

// Negated float comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod csv_io;
pub mod stats;
pub mod svg;
