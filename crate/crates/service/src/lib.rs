//! REST service, terminal chat and command-line tools on top of
//! `chatbci-core` and `chatbci-assist`.

pub mod api;
pub mod chat;
pub mod cli;
pub mod config;
pub mod error;
pub mod executor;
pub mod registry;
pub mod workspace;

pub use api::App;
pub use config::Config;
pub use error::{Result, ServiceError};
