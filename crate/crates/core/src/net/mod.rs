//! The CNN + pyramidal-FSMN acoustic model.

pub mod block;
pub mod checkpoint;
pub mod config;
pub mod frontend;
mod init;
pub mod memory;
pub mod network;

pub use block::{block_forward, Block};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{
    affine_param_count, schedule, BlockConfig, ConvSpec, FrontEndConfig, MemoryBlockSpec, MemoryMode, NetworkConfig,
    Preset,
};
pub use frontend::{front_end_forward, FrontEnd};
pub use memory::{memory_block_backward, memory_block_forward, MemoryBlock};
pub use network::{network_forward, ForwardCache, Network, NetworkOutput};
