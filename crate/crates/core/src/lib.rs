pub mod pddl;
pub mod semantics;
pub mod artobj;
pub mod solver;
pub mod dataset;
pub mod provider;
pub mod neuroplanner;
pub mod spem;
