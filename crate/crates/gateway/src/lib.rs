//! Task server for atlas-core: a JSON-RPC 2.0 subset for submitting,
//! inspecting and canceling tasks, per-task Server-Sent Events status
//! streams, an agent card and a health probe. See `docs/wire-format.md`
//! at the repository root for the exact messages.

pub mod archive;
pub mod backend;
pub mod config;
pub mod engine;
pub mod envelope;
pub mod phase;
pub mod rpc;
pub mod server;
pub mod store;

pub use config::GatewayConfig;
pub use engine::Engine;
pub use envelope::{classify_domain, Attachment, DomainClass, Goal, TaskEnvelope};
pub use phase::{is_valid_path, Phase, TaskStatusEvent};
pub use server::{agent_card, event_stream, router, Gateway};
pub use store::{TaskSnapshot, TaskStore};
