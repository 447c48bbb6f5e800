//! Deterministic gradient averaging across workers.
//!
//! Two transports: an in-memory tree reducer, which is the canonical
//! reducer for trajectory-identity guarantees, and a socket ring for
//! exercising the wire path. One collective call per rank per step;
//! contributions are never mutated.

pub mod frame;
pub mod memory;
pub mod socket;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::Tensor;

pub use frame::{Frame, MsgType};
pub use memory::InMemoryGroup;
pub use socket::{chunk_bounds, SocketConfig, SocketGroup};

/// Transport selection for a worker group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    InMemory,
    /// Loopback TCP ring; rank 0 listens on this port.
    Socket { port: u16 },
}

/// Descriptor of a worker group: N dense ranks over one transport.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WorkerGroup {
    pub size: usize,
    pub transport: Transport,
}

/// Collective operations every transport provides. Exactly one call per
/// rank per logical step; internal synchronization is the module's
/// responsibility.
pub trait Collective {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;
    /// Identical result on every rank; the in-memory transport also
    /// guarantees the result bitwise equals the serial rank-order tree.
    fn allreduce_mean(&mut self, contribution: &Tensor) -> Result<Tensor>;
    fn barrier(&mut self) -> Result<()>;
    /// True iff every rank submitted the same value.
    fn check_uniform(&mut self, value: u64) -> Result<bool>;
}

impl Collective for InMemoryGroup {
    fn rank(&self) -> usize {
        InMemoryGroup::rank(self)
    }
    fn size(&self) -> usize {
        InMemoryGroup::size(self)
    }
    fn allreduce_mean(&mut self, contribution: &Tensor) -> Result<Tensor> {
        InMemoryGroup::allreduce_mean(self, contribution)
    }
    fn barrier(&mut self) -> Result<()> {
        InMemoryGroup::barrier(self)
    }
    fn check_uniform(&mut self, value: u64) -> Result<bool> {
        InMemoryGroup::check_uniform(self, value)
    }
}

impl Collective for SocketGroup {
    fn rank(&self) -> usize {
        SocketGroup::rank(self)
    }
    fn size(&self) -> usize {
        SocketGroup::size(self)
    }
    fn allreduce_mean(&mut self, contribution: &Tensor) -> Result<Tensor> {
        self.ring_allreduce_mean(contribution)
    }
    fn barrier(&mut self) -> Result<()> {
        SocketGroup::barrier(self)
    }
    fn check_uniform(&mut self, value: u64) -> Result<bool> {
        SocketGroup::check_uniform(self, value)
    }
}
