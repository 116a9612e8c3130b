pub mod agents;
pub mod amount;
pub mod chain;
pub mod channel;
pub mod crypto;
pub mod perf;
pub mod threat;
pub mod wire;

pub use amount::{Amount, SAT_PER_BTC};
