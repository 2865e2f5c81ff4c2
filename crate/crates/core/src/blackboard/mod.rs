//! The Black Board: a forwarder that sequences encrypted frames and fans them
//! out to every other agent of a session.
//!
//! It parses only frame headers. Payloads stay opaque because no key is ever
//! configured here.

mod registry;
mod server;

pub use registry::{AuditRecord, Delivery, ForwardError, SessionRegistry};
pub use server::{Blackboard, BlackboardConfig, BlackboardHandle, DEFAULT_QUEUE_DEPTH};
