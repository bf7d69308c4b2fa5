//! Model checkpoints.
//!
//! Layout: magic `PFK1`, little-endian `u64` header length, a JSON header
//! `{"config": .., "config_hash": .., "tensors": [names..]}`, then one `PFT1`
//! tensor per name in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::config::NetworkConfig;
use crate::net::network::Network;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PFK1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    config_hash: String,
    tensors: Vec<String>,
}

pub fn write_checkpoint<W: Write>(net: &Network, w: &mut W) -> Result<()> {
    let params = net.params();
    let header = Header {
        config: net.cfg.clone(),
        config_hash: net.cfg.hash(),
        tensors: params.iter().map(|(n, _)| n.clone()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in params {
        t.write_to(w)?;
    }
    Ok(())
}

/// Reads a checkpoint; with `expected`, its config hash must match.
pub fn read_checkpoint<R: Read>(r: &mut R, expected: Option<&NetworkConfig>) -> Result<Network> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let actual = header.config.hash();
    if actual != header.config_hash {
        return Err(Error::ConfigHash { expected: header.config_hash, found: actual });
    }
    if let Some(cfg) = expected {
        if cfg.hash() != actual {
            return Err(Error::ConfigHash { expected: cfg.hash(), found: actual });
        }
    }
    let mut net = Network::new(&header.config, 0)?;
    {
        let mut params = net.params_mut();
        if params.len() != header.tensors.len() {
            return Err(Error::Format("tensor count does not match config".into()));
        }
        for ((name, slot), stored) in params.iter_mut().zip(&header.tensors) {
            if name != stored {
                return Err(Error::Format(format!("tensor order mismatch: {stored} vs {name}")));
            }
            let t = Tensor::read_from(r)?;
            if t.shape() != slot.shape() {
                return Err(Error::Format(format!("{name}: shape {:?} vs {:?}", t.shape(), slot.shape())));
            }
            **slot = t;
        }
    }
    Ok(net)
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected: Option<&NetworkConfig>) -> Result<Network> {
    read_checkpoint(&mut BufReader::new(File::open(path)?), expected)
}
