//! Input file readers: network description (JSON), bid book and baseline
//! withdrawal tables (CSV).
//!
//! The network file is strict JSON; unknown keys are rejected so typos fail
//! loudly. Quantities are SI (`"units": "si"`: meters, kg/m³, kg/s, watts) or
//! pre-scaled (`"units": "nondim"`); either way the file carries the
//! reference scales and the reader hands back a dimensionless network ready
//! for transcription. Bid and baseline tables are SI throughout: prices in
//! $/kg and flows in kg/s, converted on ingest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{BaselineFlow, Role, TransferNode};
use crate::network::{
    CompressorSpec, GasProperties, Network, Node, PipeSpec, Profile, Scaling, Units,
};

/// Either a single value or one value per hour; hourly series wrap.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileFile {
    Constant(f64),
    Hourly(Vec<f64>),
}

impl From<ProfileFile> for Profile {
    fn from(p: ProfileFile) -> Profile {
        match p {
            ProfileFile::Constant(v) => Profile::Constant(v),
            ProfileFile::Hourly(v) => Profile::Hourly(v),
        }
    }
}

impl From<Profile> for ProfileFile {
    fn from(p: Profile) -> ProfileFile {
        match p {
            Profile::Constant(v) => ProfileFile::Constant(v),
            Profile::Hourly(v) => ProfileFile::Hourly(v),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum UnitsFile {
    Si,
    Nondim,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GasFile {
    sound_speed: f64,
    compressibility: f64,
    gas_constant: f64,
    temperature: f64,
}

/// Reference length (m) and density (kg/m³); the velocity scale is the gas
/// sound speed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalingFile {
    length: f64,
    density: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    id: String,
    density_min: f64,
    density_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slack_density: Option<ProfileFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PipeFile {
    id: String,
    from: String,
    to: String,
    length: f64,
    diameter: f64,
    friction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    area: Option<f64>,
    density_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompressorFile {
    id: String,
    edge: String,
    #[serde(default)]
    at_outlet: bool,
    ratio_max: f64,
    /// Watts; omit for an unlimited station.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    power_max: Option<f64>,
    gamma: f64,
    adiabatic_eff: f64,
    mechanical_eff: f64,
    gravity: f64,
    discharge_temp: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    units: UnitsFile,
    gas: GasFile,
    scaling: ScalingFile,
    nodes: Vec<NodeFile>,
    pipes: Vec<PipeFile>,
    #[serde(default)]
    compressors: Vec<CompressorFile>,
}

fn parse_err(path: &Path, message: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// Reads a network file and returns the assembled dimensionless network
/// (SI inputs are scaled down; pre-scaled inputs pass through) with its
/// reference scaling attached.
pub fn read_network(path: &Path) -> Result<Network> {
    let text = fs::read_to_string(path)?;
    parse_network(&text, path)
}

fn parse_network(text: &str, path: &Path) -> Result<Network> {
    let file: NetworkFile = serde_json::from_str(text).map_err(|e| parse_err(path, e))?;
    let gas = GasProperties {
        sound_speed: file.gas.sound_speed,
        compressibility: file.gas.compressibility,
        gas_constant: file.gas.gas_constant,
        temperature: file.gas.temperature,
    };
    let scaling = Scaling::new(file.scaling.length, file.scaling.density, gas.sound_speed)?;
    let nodes = file
        .nodes
        .into_iter()
        .map(|n| Node {
            id: n.id,
            density_min: n.density_min,
            density_max: n.density_max,
            slack_density: n.slack_density.map(Into::into),
        })
        .collect();
    let pipes = file
        .pipes
        .into_iter()
        .map(|p| PipeSpec {
            id: p.id,
            from: p.from,
            to: p.to,
            length: p.length,
            diameter: p.diameter,
            friction: p.friction,
            area: p.area,
            density_max: p.density_max,
        })
        .collect();
    let compressors = file
        .compressors
        .into_iter()
        .map(|c| CompressorSpec {
            id: c.id,
            edge: c.edge,
            at_outlet: c.at_outlet,
            ratio_max: c.ratio_max,
            power_max: c.power_max.unwrap_or(f64::INFINITY),
            gamma: c.gamma,
            adiabatic_eff: c.adiabatic_eff,
            mechanical_eff: c.mechanical_eff,
            gravity: c.gravity,
            discharge_temp: c.discharge_temp,
        })
        .collect();
    match file.units {
        UnitsFile::Si => Network::assemble(gas, Units::Si, nodes, pipes, compressors)?
            .nondimensionalize(scaling),
        UnitsFile::Nondim => {
            let mut net = Network::assemble(gas, Units::Nondim, nodes, pipes, compressors)?;
            // Already scaled; attach the reference so hours and SI output
            // conversions work.
            net.scaling = Some(scaling);
            Ok(net)
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BidRow {
    transfer_id: String,
    node_id: String,
    role: String,
    hour: usize,
    price: f64,
    qty_min: f64,
    qty_max: f64,
}

/// Reads the bid book: one row per transfer and hour, covering hours
/// `0..hours` exactly once per transfer. Prices are $/kg, quantities kg/s;
/// quantities come back scaled to the network's flow unit.
pub fn read_bids(path: &Path, net: &Network, hours: usize) -> Result<Vec<TransferNode>> {
    let scaling = net
        .scaling
        .ok_or_else(|| Error::InvalidInput("network carries no scaling".into()))?;
    let flow = scaling.mass_flow();
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(path, e))?;

    struct Draft {
        node: usize,
        role: Role,
        price: Vec<Option<f64>>,
        qty_min: Vec<Option<f64>>,
        qty_max: Vec<Option<f64>>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut drafts: BTreeMap<String, Draft> = BTreeMap::new();

    for (i, row) in reader.deserialize().enumerate() {
        let row: BidRow = row.map_err(|e| parse_err(path, e))?;
        let line = i + 2; // header is line 1
        let role = match row.role.to_ascii_lowercase().as_str() {
            "buyer" => Role::Buyer,
            "seller" => Role::Seller,
            other => {
                return Err(parse_err(
                    path,
                    format!("line {line}: role must be buyer or seller, got `{other}`"),
                ))
            }
        };
        let node = net.node_index(&row.node_id).ok_or_else(|| {
            parse_err(path, format!("line {line}: unknown node `{}`", row.node_id))
        })?;
        if row.hour >= hours {
            return Err(parse_err(
                path,
                format!("line {line}: hour {} outside 0..{hours}", row.hour),
            ));
        }
        if row.qty_min > row.qty_max {
            return Err(parse_err(
                path,
                format!(
                    "line {line}: transfer `{}` has qty_min {} above qty_max {}",
                    row.transfer_id, row.qty_min, row.qty_max
                ),
            ));
        }
        let d = drafts.entry(row.transfer_id.clone()).or_insert_with(|| {
            order.push(row.transfer_id.clone());
            Draft {
                node,
                role,
                price: vec![None; hours],
                qty_min: vec![None; hours],
                qty_max: vec![None; hours],
            }
        });
        if d.node != node || d.role != role {
            return Err(parse_err(
                path,
                format!(
                    "line {line}: transfer `{}` changes node or role mid-file",
                    row.transfer_id
                ),
            ));
        }
        if d.price[row.hour].is_some() {
            return Err(parse_err(
                path,
                format!(
                    "line {line}: duplicate hour {} for transfer `{}`",
                    row.hour, row.transfer_id
                ),
            ));
        }
        d.price[row.hour] = Some(row.price);
        d.qty_min[row.hour] = Some(row.qty_min / flow);
        d.qty_max[row.hour] = Some(row.qty_max / flow);
    }

    let unwrap_series = |id: &str, series: Vec<Option<f64>>| -> Result<Vec<f64>> {
        series
            .into_iter()
            .enumerate()
            .map(|(h, v)| {
                v.ok_or_else(|| {
                    parse_err(path, format!("transfer `{id}` is missing hour {h}"))
                })
            })
            .collect()
    };
    order
        .into_iter()
        .map(|id| {
            let d = drafts.remove(&id).unwrap();
            Ok(TransferNode {
                node: d.node,
                role: d.role,
                price: Profile::Hourly(unwrap_series(&id, d.price)?),
                qty_min: Profile::Hourly(unwrap_series(&id, d.qty_min)?),
                qty_max: Profile::Hourly(unwrap_series(&id, d.qty_max)?),
                id,
            })
        })
        .collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineRow {
    node_id: String,
    hour: usize,
    baseline_flow: f64,
}

/// Reads contracted baseline withdrawals: one row per free node and hour,
/// kg/s positive leaving the network, complete coverage required. Slack
/// nodes must not appear.
pub fn read_baseline(path: &Path, net: &Network, hours: usize) -> Result<BaselineFlow> {
    let scaling = net
        .scaling
        .ok_or_else(|| Error::InvalidInput("network carries no scaling".into()))?;
    let flow = scaling.mass_flow();
    let s = net.n_slack();
    let m = net.n_free();
    let mut series: Vec<Vec<Option<f64>>> = vec![vec![None; hours]; m];
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(path, e))?;
    for (i, row) in reader.deserialize().enumerate() {
        let row: BaselineRow = row.map_err(|e| parse_err(path, e))?;
        let line = i + 2;
        let node = net.node_index(&row.node_id).ok_or_else(|| {
            parse_err(path, format!("line {line}: unknown node `{}`", row.node_id))
        })?;
        if node < s {
            return Err(parse_err(
                path,
                format!(
                    "line {line}: `{}` is a slack node; its inflow is not scheduled",
                    row.node_id
                ),
            ));
        }
        if row.hour >= hours {
            return Err(parse_err(
                path,
                format!("line {line}: hour {} outside 0..{hours}", row.hour),
            ));
        }
        let slot = &mut series[node - s][row.hour];
        if slot.is_some() {
            return Err(parse_err(
                path,
                format!(
                    "line {line}: duplicate hour {} for node `{}`",
                    row.hour, row.node_id
                ),
            ));
        }
        *slot = Some(row.baseline_flow / flow);
    }

    let per_free = series
        .into_iter()
        .enumerate()
        .map(|(j, vals)| {
            let id = &net.nodes[s + j].id;
            let full: Result<Vec<f64>> = vals
                .into_iter()
                .enumerate()
                .map(|(h, v)| {
                    v.ok_or_else(|| {
                        parse_err(path, format!("node `{id}` is missing hour {h}"))
                    })
                })
                .collect();
            Ok(Profile::Hourly(full?))
        })
        .collect::<Result<Vec<Profile>>>()?;
    Ok(BaselineFlow { per_free })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn network_json(units: &str) -> String {
        format!(
            r#"{{
  "units": "{units}",
  "gas": {{ "sound_speed": 377.0, "compressibility": 0.9, "gas_constant": 518.0, "temperature": 288.0 }},
  "scaling": {{ "length": 5000.0, "density": 45.0 }},
  "nodes": [
    {{ "id": "s", "density_min": 10.0, "density_max": 130.0, "slack_density": 45.0 }},
    {{ "id": "a", "density_min": 10.0, "density_max": 130.0 }}
  ],
  "pipes": [
    {{ "id": "p0", "from": "s", "to": "a", "length": 20000.0, "diameter": 0.5, "friction": 0.01, "density_max": 120.0 }}
  ],
  "compressors": [
    {{ "id": "c0", "edge": "p0", "ratio_max": 1.4, "power_max": 5e6,
       "gamma": 1.4, "adiabatic_eff": 0.85, "mechanical_eff": 0.98,
       "gravity": 0.6, "discharge_temp": 288.0 }}
  ]
}}"#
        )
    }

    fn write_temp(name: &str, content: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("pipeclear-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn si_network_reads_as_dimensionless() {
        let path = write_temp("net_si.json", &network_json("si"));
        let net = read_network(&path).unwrap();
        assert_eq!(net.units, Units::Nondim);
        assert_eq!(net.nodes.len(), 2);
        // 20 km over the 5 km reference length.
        assert_relative_eq!(net.pipes[0].length, 4.0, max_relative = 1e-12);
        assert_relative_eq!(
            net.nodes[0].slack_density.as_ref().unwrap().sample(0.0),
            1.0,
            max_relative = 1e-12
        );
        assert!(net.scaling.is_some());
        assert_eq!(net.compressors[0].power_max, 5e6);
    }

    #[test]
    fn prescaled_network_passes_through() {
        let body = network_json("nondim")
            .replace(r#""slack_density": 45.0"#, r#""slack_density": [1.0, 1.05]"#)
            .replace("\"density_min\": 10.0", "\"density_min\": 0.2")
            .replace("\"density_max\": 130.0", "\"density_max\": 2.9")
            .replace("\"density_max\": 120.0", "\"density_max\": 2.7")
            .replace("\"length\": 20000.0", "\"length\": 4.0")
            .replace("\"diameter\": 0.5", "\"diameter\": 1e-4");
        let path = write_temp("net_nd.json", &body);
        let net = read_network(&path).unwrap();
        assert_eq!(net.units, Units::Nondim);
        assert_relative_eq!(net.pipes[0].length, 4.0);
        assert!(net.scaling.is_some());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let body = network_json("si").replace("\"friction\": 0.01", "\"friction\": 0.01, \"rough\": 2");
        let path = write_temp("net_bad_key.json", &body);
        assert!(matches!(read_network(&path), Err(Error::Parse { .. })));

        let body = network_json("si").replace("\"diameter\": 0.5", "\"diameter\": 0.0");
        let path = write_temp("net_bad_diam.json", &body);
        let err = read_network(&path).unwrap_err();
        assert!(err.to_string().contains("p0"), "{err}");
    }

    #[test]
    fn bid_book_round_trips_units_and_order() {
        let net_path = write_temp("net_bids.json", &network_json("si"));
        let net = read_network(&net_path).unwrap();
        let flow = net.scaling.unwrap().mass_flow();
        let csv = "\
transfer_id,node_id,role,hour,price,qty_min,qty_max
b1,a,buyer,0,6.0,0.0,20.0
b1,a,buyer,1,5.0,0.0,20.0
s1,a,seller,1,3.0,0.0,10.0
s1,a,seller,0,3.5,0.0,10.0
";
        let path = write_temp("bids.csv", csv);
        let transfers = read_bids(&path, &net, 2).unwrap();
        assert_eq!(transfers.len(), 2);
        assert_eq!(transfers[0].id, "b1");
        assert_eq!(transfers[0].role, Role::Buyer);
        assert_eq!(transfers[0].node, 1);
        assert_eq!(transfers[0].price.sample(1.0), 5.0);
        // 20 kg/s in flow units; out-of-order hours land in their slots.
        assert_relative_eq!(
            transfers[1].qty_max.sample(0.0),
            10.0 / flow,
            max_relative = 1e-12
        );
        assert_eq!(transfers[1].price.sample(0.0), 3.5);
    }

    #[test]
    fn incomplete_or_inconsistent_bids_fail() {
        let net_path = write_temp("net_bids2.json", &network_json("si"));
        let net = read_network(&net_path).unwrap();
        let missing = "\
transfer_id,node_id,role,hour,price,qty_min,qty_max
b1,a,buyer,0,6.0,0.0,20.0
";
        let path = write_temp("bids_missing.csv", missing);
        let err = read_bids(&path, &net, 2).unwrap_err();
        assert!(err.to_string().contains("missing hour 1"), "{err}");

        let flipped = "\
transfer_id,node_id,role,hour,price,qty_min,qty_max
b1,a,buyer,0,6.0,5.0,2.0
";
        let path = write_temp("bids_flipped.csv", flipped);
        assert!(read_bids(&path, &net, 1).is_err());

        let turncoat = "\
transfer_id,node_id,role,hour,price,qty_min,qty_max
b1,a,buyer,0,6.0,0.0,2.0
b1,a,seller,1,6.0,0.0,2.0
";
        let path = write_temp("bids_turncoat.csv", turncoat);
        assert!(read_bids(&path, &net, 2).is_err());
    }

    #[test]
    fn baseline_requires_full_coverage_of_free_nodes() {
        let net_path = write_temp("net_base.json", &network_json("si"));
        let net = read_network(&net_path).unwrap();
        let flow = net.scaling.unwrap().mass_flow();
        let good = "\
node_id,hour,baseline_flow
a,0,100.0
a,1,150.0
";
        let path = write_temp("baseline.csv", good);
        let base = read_baseline(&path, &net, 2).unwrap();
        assert_eq!(base.per_free.len(), 1);
        assert_relative_eq!(
            base.per_free[0].sample(1.0),
            150.0 / flow,
            max_relative = 1e-12
        );

        let slackrow = "\
node_id,hour,baseline_flow
s,0,100.0
";
        let path = write_temp("baseline_slack.csv", slackrow);
        let err = read_baseline(&path, &net, 1).unwrap_err();
        assert!(err.to_string().contains("slack node"), "{err}");

        let path = write_temp("baseline_short.csv", "node_id,hour,baseline_flow\na,0,1.0\n");
        assert!(read_baseline(&path, &net, 2).is_err());
    }
}
