//! Command-line tool and HTTP service for open-vocabulary queries over
//! grouped Gaussian-splat scenes.

pub mod cli;
pub mod service;
pub mod session;

pub use cli::{run, EXIT_INPUT, EXIT_INTERNAL, EXIT_OK};
pub use service::{router, AppState};
pub use session::{Session, SessionConfig};
