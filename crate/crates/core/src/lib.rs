//! LINDDUN privacy threat modeling workbench.
//!
//! The crate covers the whole pipeline: the application profile and data
//! flow diagram ([`model`], [`dfd`]), the LINDDUN knowledge assets ([`kb`]),
//! a provider-neutral LLM gateway with schema-checked structured output
//! ([`gateway`]), threat elicitation ([`elicitation`]), assessment
//! ([`assessment`]) and the final report ([`report`]).

pub mod assessment;
pub mod dfd;
pub mod elicitation;
pub mod error;
pub mod gateway;
pub mod kb;
pub mod model;
pub mod report;
