//! Region-based approximate inference for discrete Bayesian networks.
//!
//! The crate turns a discrete Bayesian network into a binary factorized
//! graph (every node has at most two parents), builds a three-level region
//! graph from triplet outer regions, rewrites the region graph so that every
//! inner region has exactly two parents, and then runs convergent
//! region-based message passing (GBP or the double-loop CCCP) over it.
//! Exact inference by enumeration and variable elimination is included as a
//! verification oracle, together with KL-distance comparison reports.
//!
//! Pipeline overview:
//!
//! ```text
//! DiscreteNetwork --binary factorization--> BFG --moralize--> FactorSystem
//!     --outer region identification--> triplet outer regions
//!     --CVM--> RegionGraph --RGBF--> two-parent RegionGraph
//!     --GBP / CCCP--> BeliefState --readout--> MarginalReport
//! ```
//!
//! The [`propagate::trc_run`] entry point wires the whole pipeline together;
//! the intermediate stages are public so each transformation can be used and
//! audited on its own.

pub mod factorize;
pub mod format;
pub mod generate;
pub mod markov;
pub mod model;
pub mod oracle;
pub mod ori;
pub mod propagate;
pub mod regions;
pub mod rgbf;
pub mod table;

pub use model::{Cpt, DiscreteNetwork, Evidence, VarId, VarKind, VariableDecl};
pub use propagate::{trc_run, Engine, EngineConfig, MarginalReport, TrcOptions};
