//! Mock QUIC-like server with configurable handshake behavior.
//!
//! [`wire`] is the plaintext packet codec shared with the probing client,
//! [`spec`] describes behaviors, [`server`] is the sans-IO state machine and
//! [`udp`] binds it to a socket.

pub mod server;
pub mod spec;
pub mod udp;
pub mod wire;

pub use server::{ConnectionStats, Flight, MockEndpoint};
pub use spec::{behavior_grid, grid_sizes, BehaviorSpec, Expectation, GridRow, Preset, ResendPolicy, RetryMode, SpecError};
pub use udp::{serve, ServerHandle};
