//! Control service, file formats and command-line front end for arrays of
//! inflatable linear actuators.

pub mod formats;
pub mod protocol;
pub mod server;
pub mod session;
pub mod trace;

pub use protocol::{ErrorCode, Frame, FrameKind};
pub use server::{serve, Client, ServiceConfig, ServiceHandle};
pub use session::{ClientId, Session};
