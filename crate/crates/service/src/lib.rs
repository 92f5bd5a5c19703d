//! HTTP service, CLI support and file-backed session persistence for the
//! LINDDUN privacy threat-modeling workbench.

pub mod api;
pub mod app;
pub mod config;
pub mod store;
