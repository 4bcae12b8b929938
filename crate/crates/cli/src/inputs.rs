//! Loading shared by every command: configuration, network (with optional
//! segment refinement), input digests, and the manifest scaffold.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use pipeclear::error::Result;
use pipeclear::grid::CollocationGrid;
use pipeclear::io::{read_network, InputDigest, RunConfig, RunManifest};
use pipeclear::network::{Network, Scaling};

/// SHA-256 of the file bytes, recorded verbatim in the manifest.
pub fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = std::fs::read(path)?;
    let sum = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in sum {
        write!(hex, "{b:02x}").expect("writing to a String cannot fail");
    }
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex,
    })
}

/// Hours of data the bid and baseline files must cover.
pub fn coverage_hours(cfg: &RunConfig) -> usize {
    let h = cfg.run.data_hours.unwrap_or(cfg.run.horizon_hours);
    (h.ceil() as usize).max(1)
}

/// Reads the network and applies the configured segment refinement.
pub fn load_network(cfg: &RunConfig, path: &Path) -> Result<Network> {
    let net = read_network(path)?;
    match cfg.run.segment_km {
        Some(km) => {
            let sc = scaling_of(&net);
            net.refine(km * 1e3 / sc.length)
        }
        None => Ok(net),
    }
}

pub fn scaling_of(net: &Network) -> Scaling {
    net.scaling
        .expect("read_network always returns a dimensionless network")
}

pub fn build_grid(cfg: &RunConfig, net: &Network) -> Result<CollocationGrid> {
    let sc = scaling_of(net);
    CollocationGrid::new(sc.hours_to_time(cfg.run.horizon_hours), cfg.run.grid_points)
}

/// Manifest scaffold; callers fill status and metrics, then stamp wall time.
pub fn new_manifest(command: &str, cfg: &RunConfig, inputs: Vec<InputDigest>) -> RunManifest {
    let created_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    RunManifest {
        command: command.into(),
        created_unix,
        wall_seconds: 0.0,
        inputs,
        options: cfg.clone(),
        status: "incomplete".into(),
        optimal: false,
        objective_surplus_si: None,
        kkt_max: None,
        jacobian_nnz_fraction: None,
        iterations: None,
        replay: None,
    }
}
