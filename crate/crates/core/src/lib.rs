pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod io;
pub mod likelihood;
pub mod linalg;
pub mod model_selection;
pub mod penalty;
pub mod solver;
pub mod simulation;
