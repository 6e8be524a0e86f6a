//! Library side of the `quicaudit` command: campaigns and the closed-loop
//! behavior grid.

pub mod campaign;
pub mod grid;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const PARTIAL: i32 = 2;
    pub const CONFIG: i32 = 3;
}
