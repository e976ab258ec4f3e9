pub mod evalx;
pub mod experiments;
pub mod featurize;
pub mod json;
pub mod model;
pub mod nn;
pub mod pairgen;
pub mod recon;
pub mod synthgen;
pub mod table;
