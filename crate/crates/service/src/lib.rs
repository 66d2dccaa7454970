//! HTTP service and command-line driver for scribblematte sessions.
//!
//! Sessions live in process memory only; restarting the service drops them.

pub mod api;
pub mod cli;
pub mod store;

pub use api::{router, ApiConfig, AppState, SessionResource};
pub use store::SessionStore;
