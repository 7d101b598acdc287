//! Session protocol, servers and simulation replay for the duplex engine.
pub mod replay;
pub mod report;
pub mod server;
pub mod session;
pub mod trace;
pub mod wire;

pub use replay::{check_expectations, interrupt_violations, replay, CheckResult, Replay};
pub use report::TraceReport;
pub use server::{Server, ServerOptions, SessionOutcome};
pub use session::{ClockMode, Session, SessionHandle, Step, VoteRecord};
pub use trace::{parse_trace, render_trace, Direction, TraceLine, TraceWriter};
pub use wire::{decode_message, encode_message, Inbound, WireError, WireKind, WireMessage};
