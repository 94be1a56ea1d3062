//! Factor graphs, temperature scaling, region graphs and the `.fg` text format.

pub mod factor_graph;
pub mod io;
pub mod ising;
pub mod region;

pub use factor_graph::{decode_index, linear_index, FactorGraph, FactorTable};
pub use io::{load_factor_graph, save_factor_graph, LoadOptions};
pub use ising::{spin, IsingModel};
pub use region::{two_core, InnerRegion, OuterRegion, RegionGraph, RegionLayout};

/// Bethe region graph of a factor graph.
pub fn build_bethe_regions<R: crate::scalar::Real>(fg: &FactorGraph<R>) -> RegionGraph {
    RegionGraph::bethe(fg)
}

/// Every violated region-graph invariant; empty iff valid.
pub fn validate_region_graph<R: crate::scalar::Real>(rg: &RegionGraph, fg: &FactorGraph<R>) -> Vec<String> {
    rg.validate(fg)
}
