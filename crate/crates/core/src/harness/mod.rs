//! Model generators, annealed temperature sweeps, ensemble summaries and CSV.

mod generators;
mod summary;
mod sweep;

pub use generators::{
    gen_fully_connected, gen_potts_regular, gen_wainwright_jordan, random_cubic_graph, rng, wainwright_jordan_model, RNG_NAME,
};
pub use summary::{aggregate, fmt_num, truncated_quartiles, write_sweep_csv, EnsembleRow, EnsembleSummary, Quartiles, SWEEP_HEADER};
pub use sweep::{anneal_sweep, anneal_sweep_with, AnnealSchedule, Direction, OracleMode, PairSet, SweepOptions, SweepRecord, AUTO_ORACLE_LIMIT};
