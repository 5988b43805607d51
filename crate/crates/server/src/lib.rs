//! Human-vs-strategy play sessions over HTTP.
//!
//! The opponent's move for each round is drawn before the participant
//! submits theirs and is never exposed until the round resolves. Every
//! session is an append-only event log, so a restarted server picks up
//! where it stopped.

mod http;
mod store;

pub use http::{router, serve, AbortRequest, MoveRequest, ServerOptions, SessionReport};
pub use store::{
    Clock, MoveResponse, ServiceError, SessionConfig, SessionState, SessionStore, SessionView, ViewRound,
    DEFAULT_IDLE_TIMEOUT, HUMAN_ID,
};
