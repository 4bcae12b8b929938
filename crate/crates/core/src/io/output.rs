//! Artifact writers: trajectory, schedule, price, and ratio tables (CSV),
//! the run manifest (JSON), and the per-iteration solver log (JSON lines).
//!
//! Optimizer and simulator trajectories share one table schema so runs can
//! be diffed column by column. Emitted values are SI by default (hours,
//! kg/m³, kg/s, kg, $, W); builders also produce the raw dimensionless
//! series for debugging. Floats print in Rust's shortest round-trip form, so
//! re-ingesting an artifact reproduces the run's numbers bit for bit.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{boundary_flows, station_power};
use crate::error::{Error, Result};
use crate::market::Role;
use crate::simulator::{total_linepack, Trajectory};
use crate::solver::{IterRecord, NlpModel, PriceSeries};
use crate::transcription::NlpProblem;

fn csv_err(e: csv::Error) -> Error {
    Error::Parse {
        path: "<csv output>".into(),
        message: e.to_string(),
    }
}

/// One table covering nodal densities, per-edge endpoint flows, and total
/// linepack per time row; identical whether the rows come from the optimizer
/// or the integrator.
#[derive(Debug, Clone)]
pub struct TrajectoryTable {
    /// Hours for SI tables, dimensionless time otherwise.
    pub time: Vec<f64>,
    pub node_ids: Vec<String>,
    pub edge_ids: Vec<String>,
    /// Row-major: `density[row][node]`, slack nodes included.
    pub density: Vec<Vec<f64>>,
    pub inlet: Vec<Vec<f64>>,
    pub outlet: Vec<Vec<f64>>,
    pub linepack: Vec<f64>,
}

impl TrajectoryTable {
    /// Collocation-point states of a transcribed solution; endpoint flows
    /// recovered through the circular difference stencil.
    pub fn from_solution(p: &NlpProblem, x: &[f64], si: bool) -> Result<Self> {
        if x.len() != p.n_vars() {
            return Err(Error::DimensionMismatch(format!(
                "solution has {} variables, the problem {}",
                x.len(),
                p.n_vars()
            )));
        }
        let net = p.network();
        let inc = p.incidence();
        let grid = p.grid();
        let (s, m, e) = (inc.n_slack, inc.n_free, inc.n_edges());
        let n = grid.n();

        // Full density series per node, then circular rates per node.
        let mut varrho_rows = vec![vec![0.0; s + m]; n];
        for i in 0..s {
            let series = p.supply_series(i);
            for k in 0..n {
                varrho_rows[k][i] = series[k];
            }
        }
        for j in 0..m {
            for k in 0..n {
                varrho_rows[k][s + j] = x[p.density_index(j, k)];
            }
        }
        let d = grid.diff();
        let mut dot_rows = vec![vec![0.0; s + m]; n];
        let mut series = vec![0.0; n];
        let mut rates = vec![0.0; n];
        for i in 0..s + m {
            for k in 0..n {
                series[k] = varrho_rows[k][i];
            }
            d.apply(&series, &mut rates);
            for k in 0..n {
                dot_rows[k][i] = rates[k];
            }
        }

        let mut tail = vec![1.0; e];
        let mut head = vec![1.0; e];
        let mut density = Vec::with_capacity(n);
        let mut inlet = Vec::with_capacity(n);
        let mut outlet = Vec::with_capacity(n);
        let mut linepack = Vec::with_capacity(n);
        for k in 0..n {
            net.fill_edge_ratios(&p.ratios_at(x, k), &mut tail, &mut head);
            let st = p.point_state(x, k);
            let (fin, fout) = boundary_flows(inc, &dot_rows[k], &st.phi, &tail, &head);
            density.push(varrho_rows[k].clone());
            inlet.push(fin);
            outlet.push(fout);
            linepack.push(total_linepack(inc, &varrho_rows[k], &tail, &head));
        }

        let time = if si {
            p.hours()
        } else {
            grid.points()
        };
        let mut table = Self {
            time,
            node_ids: net.nodes.iter().map(|nd| nd.id.clone()).collect(),
            edge_ids: net.pipes.iter().map(|pp| pp.id.clone()).collect(),
            density,
            inlet,
            outlet,
            linepack,
        };
        if si {
            table.rescale(p)?;
        }
        Ok(table)
    }

    /// Simulated states; `start_hour` anchors the fine window on the absolute
    /// clock for SI tables.
    pub fn from_simulation(
        p: &NlpProblem,
        traj: &Trajectory,
        start_hour: f64,
        si: bool,
    ) -> Result<Self> {
        let net = p.network();
        let scaling = net
            .scaling
            .ok_or_else(|| Error::InvalidInput("network carries no scaling".into()))?;
        let inc = p.incidence();
        let s = inc.n_slack;
        let rows = traj.states.len();
        if traj.inlet.len() != rows || traj.linepack.len() != rows {
            return Err(Error::DimensionMismatch(
                "trajectory series disagree on length".into(),
            ));
        }

        // The simulator tracks free densities only; recover slack values the
        // same way the replay built them, by circular interpolation of the
        // problem's supply series at the fine times.
        let grid = p.grid();
        let sigma_series: Vec<Vec<f64>> = (0..s).map(|i| p.supply_series(i)).collect();
        let mut density = Vec::with_capacity(rows);
        for (r, st) in traj.states.iter().enumerate() {
            let mut row = vec![0.0; s + st.rho.len()];
            let t = grid.wrap(traj.times[r]);
            for (i, sv) in sigma_series.iter().enumerate() {
                row[i] = grid.interpolate(sv, t)?;
            }
            row[s..].copy_from_slice(&st.rho);
            density.push(row);
        }

        let time = traj
            .times
            .iter()
            .map(|t| {
                if si {
                    start_hour + scaling.time_to_hours(*t)
                } else {
                    *t
                }
            })
            .collect();
        let mut table = Self {
            time,
            node_ids: net.nodes.iter().map(|nd| nd.id.clone()).collect(),
            edge_ids: net.pipes.iter().map(|pp| pp.id.clone()).collect(),
            density,
            inlet: traj.inlet.clone(),
            outlet: traj.outlet.clone(),
            linepack: traj.linepack.clone(),
        };
        if si {
            table.rescale(p)?;
        }
        Ok(table)
    }

    fn rescale(&mut self, p: &NlpProblem) -> Result<()> {
        let net = p.network();
        let scaling = net
            .scaling
            .ok_or_else(|| Error::InvalidInput("network carries no scaling".into()))?;
        let inc = p.incidence();
        let flow = scaling.mass_flow();
        for row in &mut self.density {
            for v in row.iter_mut() {
                *v *= scaling.density;
            }
        }
        for rows in [&mut self.inlet, &mut self.outlet] {
            for row in rows.iter_mut() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v *= inc.area[k] * flow;
                }
            }
        }
        for v in &mut self.linepack {
            *v *= scaling.stock();
        }
        Ok(())
    }

    /// Header: time, density per node, inlet/outlet per edge, linepack.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["time".to_string()];
        header.extend(self.node_ids.iter().map(|id| format!("density[{id}]")));
        for id in &self.edge_ids {
            header.push(format!("inlet[{id}]"));
            header.push(format!("outlet[{id}]"));
        }
        header.push("linepack".into());
        out.write_record(&header).map_err(csv_err)?;
        for r in 0..self.time.len() {
            let mut rec = vec![self.time[r].to_string()];
            rec.extend(self.density[r].iter().map(|v| v.to_string()));
            for k in 0..self.edge_ids.len() {
                rec.push(self.inlet[r][k].to_string());
                rec.push(self.outlet[r][k].to_string());
            }
            rec.push(self.linepack[r].to_string());
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One cleared transfer at one grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub transfer_id: String,
    pub node_id: String,
    pub role: String,
    pub hour: f64,
    pub price: f64,
    pub quantity: f64,
    pub qty_min: f64,
    pub qty_max: f64,
}

/// Cleared schedule rows, transfer-major then time-major.
pub fn schedule_rows(p: &NlpProblem, x: &[f64], si: bool) -> Vec<ScheduleRow> {
    let net = p.network();
    let market = p.market();
    let hours = p.hours();
    let flow = if si {
        net.scaling.map(|s| s.mass_flow()).unwrap_or(1.0)
    } else {
        1.0
    };
    let mut rows = Vec::with_capacity(market.n_transfers() * p.n_points());
    for (m, t) in market.transfers.iter().enumerate() {
        let role = match t.role {
            Role::Buyer => "buyer",
            Role::Seller => "seller",
        };
        for k in 0..p.n_points() {
            rows.push(ScheduleRow {
                transfer_id: t.id.clone(),
                node_id: net.nodes[t.node].id.clone(),
                role: role.into(),
                hour: if si {
                    hours[k]
                } else {
                    p.grid().point(k)
                },
                price: market.price[m][k],
                quantity: x[p.quantity_index(m, k)] * flow,
                qty_min: market.qty_min[m][k] * flow,
                qty_max: market.qty_max[m][k] * flow,
            });
        }
    }
    rows
}

pub fn write_schedule_csv(w: impl Write, rows: &[ScheduleRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// One nodal trade value at one grid point, $/kg.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriceRow {
    pub node_id: String,
    pub hour: f64,
    pub trade_value: f64,
}

/// Per-node trade-value rows; prices are scale-invariant so the same rows
/// serve SI and dimensionless output.
pub fn price_rows(p: &NlpProblem, prices: &PriceSeries) -> Vec<PriceRow> {
    let net = p.network();
    let s = p.incidence().n_slack;
    let hours = p.hours();
    let mut rows = Vec::new();
    for (j, series) in prices.values.iter().enumerate() {
        for (k, v) in series.iter().enumerate() {
            rows.push(PriceRow {
                node_id: net.nodes[s + j].id.clone(),
                hour: hours[k],
                trade_value: *v,
            });
        }
    }
    rows
}

pub fn write_prices_csv(w: impl Write, rows: &[PriceRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// One station operating point: boost ratio and shaft power.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioRow {
    pub compressor_id: String,
    pub hour: f64,
    pub ratio: f64,
    pub power_watts: f64,
}

pub fn ratio_rows(p: &NlpProblem, x: &[f64]) -> Result<Vec<RatioRow>> {
    let net = p.network();
    let inc = p.incidence();
    let scaling = net
        .scaling
        .ok_or_else(|| Error::InvalidInput("network carries no scaling".into()))?;
    let hours = p.hours();
    let mut rows = Vec::new();
    for (c, comp) in net.compressors.iter().enumerate() {
        for k in 0..p.n_points() {
            let alpha = x[p.ratio_index(c, k)];
            let mdot =
                x[p.flux_index(comp.edge, k)].abs() * inc.area[comp.edge] * scaling.mass_flow();
            rows.push(RatioRow {
                compressor_id: comp.id.clone(),
                hour: hours[k],
                ratio: alpha,
                power_watts: station_power(comp, mdot, alpha)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_ratios_csv(w: impl Write, rows: &[RatioRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Digest of one input file, recorded for reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Post-replay deviation metrics copied into the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub density_deviation: f64,
    pub flux_deviation: f64,
    pub periodicity_gap: f64,
    pub worst_pressure_slack: f64,
    /// None when no station carries a finite power limit.
    pub worst_power_margin_watts: Option<f64>,
}

/// The single record every command emits: inputs, resolved options, status,
/// and headline metrics. Equal digests and options imply equal primal
/// artifacts; the manifest itself differs only in timestamps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub created_unix: u64,
    pub wall_seconds: f64,
    pub inputs: Vec<InputDigest>,
    pub options: super::config::RunConfig,
    pub status: String,
    pub optimal: bool,
    pub objective_surplus_si: Option<f64>,
    pub kkt_max: Option<f64>,
    pub jacobian_nnz_fraction: Option<f64>,
    pub iterations: Option<usize>,
    pub replay: Option<ReplaySummary>,
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, manifest).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// One JSON object per iteration, in order.
pub fn write_solver_log(mut w: impl Write, log: &[IterRecord]) -> Result<()> {
    for rec in log {
        let line = serde_json::to_string(rec).map_err(|e| Error::Parse {
            path: "<solver log>".into(),
            message: e.to_string(),
        })?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CollocationGrid;
    use crate::io::config::RunConfig;
    use crate::market::{BaselineFlow, TransferNode};
    use crate::network::{
        CompressorSpec, GasProperties, Network, Node, PipeSpec, Profile, Scaling, Units,
    };
    use crate::simulator::validate_solution;
    use crate::solver::{solve, SolveStatus, SolverOptions};
    use crate::transcription::{transcribe, TranscribeOptions};
    use approx::assert_relative_eq;

    fn fixture_problem() -> NlpProblem {
        let gas = GasProperties {
            sound_speed: 377.0,
            compressibility: 0.9,
            gas_constant: 518.0,
            temperature: 288.0,
        };
        let node = |id: &str| Node {
            id: id.into(),
            density_min: 10.0,
            density_max: 130.0,
            slack_density: None,
        };
        let net = Network::assemble(
            gas,
            Units::Si,
            vec![
                Node {
                    slack_density: Some(Profile::Constant(45.0)),
                    ..node("s")
                },
                node("a"),
            ],
            vec![PipeSpec {
                id: "p0".into(),
                from: "s".into(),
                to: "a".into(),
                length: 20e3,
                diameter: 0.5,
                friction: 0.01,
                area: None,
                density_max: 120.0,
            }],
            vec![CompressorSpec {
                id: "c0".into(),
                edge: "p0".into(),
                at_outlet: false,
                ratio_max: 1.4,
                power_max: 5e6,
                gamma: 1.4,
                adiabatic_eff: 0.85,
                mechanical_eff: 0.98,
                gravity: 0.6,
                discharge_temp: 288.0,
            }],
        )
        .unwrap()
        .nondimensionalize(Scaling::new(5000.0, 45.0, 377.0).unwrap())
        .unwrap();
        let scaling = net.scaling.unwrap();
        let baseline = BaselineFlow {
            per_free: vec![Profile::Constant(0.004)],
        };
        let transfers = vec![TransferNode {
            id: "b1".into(),
            node: 1,
            role: Role::Buyer,
            price: Profile::Hourly(vec![6.0, 5.0, 7.0]),
            qty_min: Profile::Constant(0.0),
            qty_max: Profile::Constant(0.002),
        }];
        let grid = CollocationGrid::new(scaling.hours_to_time(3.0), 3).unwrap();
        transcribe(
            &net,
            transfers,
            &baseline,
            grid,
            TranscribeOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn solution_table_round_trips_scales_and_schema() {
        let p = fixture_problem();
        let x = p.initial_point();
        let si = TrajectoryTable::from_solution(&p, &x, true).unwrap();
        let nd = TrajectoryTable::from_solution(&p, &x, false).unwrap();
        let scaling = p.network().scaling.unwrap();
        let area = p.incidence().area[0];
        assert_eq!(si.density.len(), 3);
        assert_relative_eq!(
            si.density[0][1],
            nd.density[0][1] * scaling.density,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            si.inlet[1][0],
            nd.inlet[1][0] * area * scaling.mass_flow(),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            si.linepack[2],
            nd.linepack[2] * scaling.stock(),
            max_relative = 1e-12
        );
        assert_relative_eq!(si.time[1], 1.0, max_relative = 1e-12);

        let mut buf = Vec::new();
        si.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "time,density[s],density[a],inlet[p0],outlet[p0],linepack"
        );
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn schedule_and_ratio_rows_cover_every_point() {
        let p = fixture_problem();
        let mut x = p.initial_point();
        for k in 0..3 {
            x[p.quantity_index(0, k)] = 1e-3 * (k + 1) as f64;
            x[p.ratio_index(0, k)] = 1.1;
        }
        let flow = p.network().scaling.unwrap().mass_flow();
        let rows = schedule_rows(&p, &x, true);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].transfer_id, "b1");
        assert_eq!(rows[1].price, 5.0);
        assert_relative_eq!(rows[2].quantity, 3e-3 * flow, max_relative = 1e-12);
        let mut buf = Vec::new();
        write_schedule_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "transfer_id,node_id,role,hour,price,quantity,qty_min,qty_max"
        ));

        let rrows = ratio_rows(&p, &x).unwrap();
        assert_eq!(rrows.len(), 3);
        assert!(rrows.iter().all(|r| r.ratio == 1.1 && r.power_watts > 0.0));
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let manifest = RunManifest {
            command: "optimize".into(),
            created_unix: 1_700_000_000,
            wall_seconds: 1.25,
            inputs: vec![InputDigest {
                path: "network.json".into(),
                sha256: "ab".repeat(32),
            }],
            options: RunConfig::default(),
            status: "Optimal".into(),
            optimal: true,
            objective_surplus_si: Some(123.4),
            kkt_max: Some(3e-9),
            jacobian_nnz_fraction: Some(0.004),
            iterations: Some(17),
            replay: Some(ReplaySummary {
                density_deviation: 1e-5,
                flux_deviation: 2e-5,
                periodicity_gap: 3e-7,
                worst_pressure_slack: 0.12,
                worst_power_margin_watts: None,
            }),
        };
        let dir = std::env::temp_dir().join("pipeclear-output-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("manifest.json");
        write_manifest(&path, &manifest).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.command, "optimize");
        assert_eq!(back.options.run.grid_points, 24);
        assert_eq!(back.replay.unwrap().worst_power_margin_watts, None);
        assert_eq!(back.kkt_max, Some(3e-9));
    }

    /// The emitted tables agree with an optimized solve end to end: the
    /// simulator table stays near the optimizer table at shared rows.
    #[test]
    fn optimizer_and_replay_tables_agree() {
        let p = fixture_problem();
        let res = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(res.status, SolveStatus::Optimal);
        let report = validate_solution(&p, &res.x, 8).unwrap();
        let opt = TrajectoryTable::from_solution(&p, &res.x, true).unwrap();
        let sim =
            TrajectoryTable::from_simulation(&p, &report.trajectory, 0.0, true).unwrap();
        assert_eq!(sim.density.len(), 3 * 8 + 1);
        for k in 0..3 {
            assert_relative_eq!(
                opt.density[k][1],
                sim.density[k * 8][1],
                epsilon = 1e-3
            );
            assert_relative_eq!(opt.linepack[k], sim.linepack[k * 8], max_relative = 1e-4);
            assert_relative_eq!(opt.time[k], sim.time[k * 8], max_relative = 1e-12);
        }

        let mut buf = Vec::new();
        write_solver_log(&mut buf, &res.log).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // Barrier-shrink iterations log nothing, so lines ≤ iterations.
        let lines = text.lines().count();
        assert!(lines > 0 && lines <= res.iterations);
        assert!(text.lines().next().unwrap().contains("\"mu\":"));
    }
}
