//! Pipeline network description: nodes, pipes, compressors, segment
//! refinement, non-dimensionalization, and incidence structure.
//!
//! A network is canonical once assembled: nodes are reordered so that every
//! slack node precedes every non-slack node, and all cross-references are
//! resolved to indices. All operations below assume (and preserve) that
//! ordering.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::sparse::{Coo, Csc};

/// Unit system the numeric fields of a [`Network`] are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    Si,
    Nondim,
}

/// Gas constants. `sound_speed` satisfies a² = Z·R·T when derived from the
/// thermodynamic state rather than given directly.
#[derive(Debug, Clone, Copy)]
pub struct GasProperties {
    /// Isothermal sound speed a (m/s).
    pub sound_speed: f64,
    /// Compressibility factor Z.
    pub compressibility: f64,
    /// Specific gas constant R (J/(kg·K)).
    pub gas_constant: f64,
    /// Gas temperature (K).
    pub temperature: f64,
}

impl GasProperties {
    /// Derives the sound speed from the thermodynamic state, a = √(ZRT).
    pub fn from_state(compressibility: f64, gas_constant: f64, temperature: f64) -> Result<Self> {
        let a2 = compressibility * gas_constant * temperature;
        if !(a2 > 0.0) {
            return Err(Error::InvalidNetwork(
                "gas state must give Z·R·T > 0".into(),
            ));
        }
        Ok(Self {
            sound_speed: a2.sqrt(),
            compressibility,
            gas_constant,
            temperature,
        })
    }
}

/// Reference scales for non-dimensionalization.
///
/// Derived scales: time ℓ0/a, flux a·ρ0, mass flow a·ρ0 per m² of area.
#[derive(Debug, Clone, Copy)]
pub struct Scaling {
    /// Nominal length ℓ0 (m).
    pub length: f64,
    /// Nominal density ρ0 (kg/m³).
    pub density: f64,
    /// Sound speed a (m/s); couples length to time.
    pub sound_speed: f64,
}

impl Scaling {
    pub fn new(length: f64, density: f64, sound_speed: f64) -> Result<Self> {
        if !(length > 0.0 && density > 0.0 && sound_speed > 0.0) {
            return Err(Error::InvalidNetwork(
                "scaling constants must be strictly positive".into(),
            ));
        }
        Ok(Self {
            length,
            density,
            sound_speed,
        })
    }

    /// Time scale ℓ0/a (s).
    pub fn time(&self) -> f64 {
        self.length / self.sound_speed
    }

    /// Mass-flux scale a·ρ0 (kg/(m²·s)).
    pub fn flux(&self) -> f64 {
        self.sound_speed * self.density
    }

    /// Mass-flow scale a·ρ0·X0 (kg/s) for the 1 m² reference area, so a
    /// dimensionless flux times an area in m² converts to kg/s by this
    /// factor alone.
    pub fn mass_flow(&self) -> f64 {
        self.flux()
    }

    /// Factor turning a dimensionless surplus or linepack into currency or
    /// kilograms: ρ0·ℓ0·X0. With prices held numerically equal to their SI
    /// values (currency per kg), the whole unit chain closes through this one
    /// constant.
    pub fn stock(&self) -> f64 {
        self.density * self.length
    }

    /// Converts a duration in hours to dimensionless time.
    pub fn hours_to_time(&self, hours: f64) -> f64 {
        hours * 3600.0 / self.time()
    }

    /// Converts dimensionless time back to hours.
    pub fn time_to_hours(&self, t: f64) -> f64 {
        t * self.time() / 3600.0
    }
}

/// Time series indexed by hour, held constant within each hour. Lookups wrap,
/// so a profile over hours 0..H also describes any horizon that repeats it.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Constant(f64),
    Hourly(Vec<f64>),
}

impl Profile {
    /// Left-constant sample at a (possibly fractional, possibly negative)
    /// hour. Hourly profiles wrap modulo their length.
    pub fn sample(&self, hour: f64) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Hourly(vals) => {
                let n = vals.len() as f64;
                let h = hour.rem_euclid(n);
                let mut idx = h.floor() as usize;
                if idx >= vals.len() {
                    idx = vals.len() - 1; // guards h == n from rounding
                }
                vals[idx]
            }
        }
    }

    /// Value at hour 0.
    pub fn start(&self) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Hourly(vals) => vals[0],
        }
    }

    /// Value in the final hour (the left limit at the horizon end).
    pub fn end(&self) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Hourly(vals) => *vals.last().unwrap(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Profile {
        match self {
            Profile::Constant(v) => Profile::Constant(v * factor),
            Profile::Hourly(vals) => Profile::Hourly(vals.iter().map(|v| v * factor).collect()),
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            Profile::Constant(v) => std::slice::from_ref(v),
            Profile::Hourly(vals) => vals,
        }
    }
}

/// Network node. A node is slack iff it carries a supply density profile;
/// non-slack nodes have free density and a (possibly zero) withdrawal.
#[derive(Debug, Clone)]
pub struct Node {
    pub id: String,
    /// Lower density bound (kg/m³ or nondim).
    pub density_min: f64,
    /// Upper density bound at the node itself.
    pub density_max: f64,
    /// Supply density σ(t); present exactly on slack nodes.
    pub slack_density: Option<Profile>,
}

impl Node {
    pub fn is_slack(&self) -> bool {
        self.slack_density.is_some()
    }
}

/// Directed pipe (or refined pipe segment) between two resolved node indices.
#[derive(Debug, Clone)]
pub struct Pipe {
    pub id: String,
    pub from: usize,
    pub to: usize,
    /// Length L (m or nondim).
    pub length: f64,
    /// Diameter D (m or nondim).
    pub diameter: f64,
    /// Friction factor λ (dimensionless).
    pub friction: f64,
    /// Cross-sectional area X (m²); defaults to πD²/4. Areas keep their SI
    /// magnitude in the dimensionless system (reference area 1 m²), which
    /// keeps mass and momentum rows on comparable scales.
    pub area: f64,
    /// Maximum allowable operating density for this pipe (MAOP equivalent).
    pub density_max: f64,
}

/// Compressor station attached to one end of an edge. `at_outlet = false`
/// boosts the density entering the edge from its tail node; `true` boosts the
/// density at the head end.
#[derive(Debug, Clone)]
pub struct Compressor {
    pub id: String,
    /// Index of the controlled edge in `Network::pipes`.
    pub edge: usize,
    pub at_outlet: bool,
    /// Upper bound on the compression ratio; the lower bound is always 1.
    pub ratio_max: f64,
    /// Station power limit E^max (W). Kept in SI regardless of network units.
    pub power_max: f64,
    /// Specific-heat ratio γ.
    pub gamma: f64,
    pub adiabatic_eff: f64,
    pub mechanical_eff: f64,
    /// Gas gravity G (dimensionless, relative to air).
    pub gravity: f64,
    /// Suction temperature (K) entering the station.
    pub discharge_temp: f64,
}

impl Compressor {
    /// Polytropic exponent h = (γ−1)/γ ∈ (0,1).
    pub fn exponent(&self) -> f64 {
        (self.gamma - 1.0) / self.gamma
    }

    /// Specific compression energy coefficient ε (J·s/kg per unit mass flow),
    /// so that station power is ε·|ṁ|·(α^h − 1) with ṁ in kg/s.
    pub fn energy_coeff(&self) -> f64 {
        286.76 * self.discharge_temp
            / (self.adiabatic_eff * self.mechanical_eff * self.gravity * self.exponent())
    }
}

/// Pipe description with node references still by id; resolved by
/// [`Network::assemble`].
#[derive(Debug, Clone)]
pub struct PipeSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
    pub diameter: f64,
    pub friction: f64,
    pub area: Option<f64>,
    pub density_max: f64,
}

/// Compressor description with the edge referenced by id.
#[derive(Debug, Clone)]
pub struct CompressorSpec {
    pub id: String,
    pub edge: String,
    pub at_outlet: bool,
    pub ratio_max: f64,
    pub power_max: f64,
    pub gamma: f64,
    pub adiabatic_eff: f64,
    pub mechanical_eff: f64,
    pub gravity: f64,
    pub discharge_temp: f64,
}

/// Connected directed metric graph with slack-first node ordering.
#[derive(Debug, Clone)]
pub struct Network {
    pub units: Units,
    pub gas: GasProperties,
    /// Present iff `units == Nondim`; records the scales used.
    pub scaling: Option<Scaling>,
    pub nodes: Vec<Node>,
    pub pipes: Vec<Pipe>,
    pub compressors: Vec<Compressor>,
    n_slack: usize,
}

impl Network {
    /// Validates raw parts, resolves id references, and reorders nodes
    /// slack-first (stable within each group).
    pub fn assemble(
        gas: GasProperties,
        units: Units,
        nodes: Vec<Node>,
        pipes: Vec<PipeSpec>,
        compressors: Vec<CompressorSpec>,
    ) -> Result<Network> {
        if !(gas.sound_speed > 0.0) {
            return Err(Error::InvalidNetwork("sound speed must be positive".into()));
        }
        if nodes.is_empty() {
            return Err(Error::InvalidNetwork("network has no nodes".into()));
        }

        let mut ordered: Vec<Node> = Vec::with_capacity(nodes.len());
        for n in nodes.iter().filter(|n| n.is_slack()) {
            ordered.push(n.clone());
        }
        let n_slack = ordered.len();
        for n in nodes.iter().filter(|n| !n.is_slack()) {
            ordered.push(n.clone());
        }
        if n_slack == 0 {
            return Err(Error::InvalidNetwork(
                "network needs at least one slack node".into(),
            ));
        }

        let mut node_index = BTreeMap::new();
        for (i, n) in ordered.iter().enumerate() {
            if node_index.insert(n.id.clone(), i).is_some() {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate node id `{}`",
                    n.id
                )));
            }
            if !(n.density_min > 0.0 && n.density_min < n.density_max) {
                return Err(Error::InvalidNetwork(format!(
                    "node `{}` needs 0 < density_min < density_max",
                    n.id
                )));
            }
            if let Some(p) = &n.slack_density {
                if p.values().is_empty() {
                    return Err(Error::InvalidNetwork(format!(
                        "slack node `{}` has an empty supply profile",
                        n.id
                    )));
                }
                if p.values().iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::InvalidNetwork(format!(
                        "slack node `{}` has a non-positive supply density",
                        n.id
                    )));
                }
            }
        }

        let mut edge_index = BTreeMap::new();
        let mut resolved_pipes = Vec::with_capacity(pipes.len());
        for (k, p) in pipes.iter().enumerate() {
            if edge_index.insert(p.id.clone(), k).is_some() {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate pipe id `{}`",
                    p.id
                )));
            }
            let from = *node_index.get(&p.from).ok_or_else(|| {
                Error::InvalidNetwork(format!("pipe `{}` references unknown node `{}`", p.id, p.from))
            })?;
            let to = *node_index.get(&p.to).ok_or_else(|| {
                Error::InvalidNetwork(format!("pipe `{}` references unknown node `{}`", p.id, p.to))
            })?;
            if from == to {
                return Err(Error::InvalidNetwork(format!(
                    "pipe `{}` is a self-loop",
                    p.id
                )));
            }
            if !(p.length > 0.0 && p.diameter > 0.0 && p.friction > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "pipe `{}` needs positive length, diameter, friction",
                    p.id
                )));
            }
            if !(p.density_max > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "pipe `{}` needs a positive density cap",
                    p.id
                )));
            }
            let area = match p.area {
                Some(x) if x > 0.0 => x,
                Some(_) => {
                    return Err(Error::InvalidNetwork(format!(
                        "pipe `{}` has a non-positive area",
                        p.id
                    )))
                }
                None => std::f64::consts::FRAC_PI_4 * p.diameter * p.diameter,
            };
            resolved_pipes.push(Pipe {
                id: p.id.clone(),
                from,
                to,
                length: p.length,
                diameter: p.diameter,
                friction: p.friction,
                area,
                density_max: p.density_max,
            });
        }

        let mut resolved_comps = Vec::with_capacity(compressors.len());
        let mut comp_ids = BTreeMap::new();
        let mut taken_ends = BTreeMap::new();
        for c in &compressors {
            if comp_ids.insert(c.id.clone(), ()).is_some() {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate compressor id `{}`",
                    c.id
                )));
            }
            let edge = *edge_index.get(&c.edge).ok_or_else(|| {
                Error::InvalidNetwork(format!(
                    "compressor `{}` references unknown pipe `{}`",
                    c.id, c.edge
                ))
            })?;
            if taken_ends.insert((edge, c.at_outlet), ()).is_some() {
                return Err(Error::InvalidNetwork(format!(
                    "two compressors share one end of pipe `{}`",
                    c.edge
                )));
            }
            if !(c.ratio_max >= 1.0) {
                return Err(Error::InvalidNetwork(format!(
                    "compressor `{}` needs ratio_max ≥ 1",
                    c.id
                )));
            }
            if !(c.power_max > 0.0
                && c.gamma > 1.0
                && c.adiabatic_eff > 0.0
                && c.adiabatic_eff <= 1.0
                && c.mechanical_eff > 0.0
                && c.mechanical_eff <= 1.0
                && c.gravity > 0.0
                && c.discharge_temp > 0.0)
            {
                return Err(Error::InvalidNetwork(format!(
                    "compressor `{}` has out-of-range parameters",
                    c.id
                )));
            }
            resolved_comps.push(Compressor {
                id: c.id.clone(),
                edge,
                at_outlet: c.at_outlet,
                ratio_max: c.ratio_max,
                power_max: c.power_max,
                gamma: c.gamma,
                adiabatic_eff: c.adiabatic_eff,
                mechanical_eff: c.mechanical_eff,
                gravity: c.gravity,
                discharge_temp: c.discharge_temp,
            });
        }

        let net = Network {
            units,
            gas,
            scaling: None,
            nodes: ordered,
            pipes: resolved_pipes,
            compressors: resolved_comps,
            n_slack,
        };
        net.check_connected()?;
        Ok(net)
    }

    pub fn n_slack(&self) -> usize {
        self.n_slack
    }

    /// Count of non-slack nodes (the dimension of the free density vector).
    pub fn n_free(&self) -> usize {
        self.nodes.len() - self.n_slack
    }

    pub fn n_edges(&self) -> usize {
        self.pipes.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for p in &self.pipes {
            adj[p.from].push(p.to);
            adj[p.to].push(p.from);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if seen.iter().all(|s| *s) {
            Ok(())
        } else {
            let lost = self
                .nodes
                .iter()
                .zip(&seen)
                .find(|(_, s)| !**s)
                .map(|(n, _)| n.id.clone())
                .unwrap_or_default();
            Err(Error::InvalidNetwork(format!(
                "graph is disconnected (node `{lost}` unreachable)"
            )))
        }
    }

    /// Splits every pipe into the fewest equal-length segments that are each
    /// strictly shorter than `delta` (same unit as the pipe lengths).
    /// Interior nodes are non-slack, inherit the pipe's density cap, and take
    /// the looser of the endpoint minima. Compressors move to the end segment
    /// of their original pipe so the station stays at its physical location.
    pub fn refine(&self, delta: f64) -> Result<Network> {
        if !(delta > 0.0) {
            return Err(Error::InvalidInput(
                "refinement length must be positive".into(),
            ));
        }
        let mut nodes = self.nodes.clone();
        let mut pipes: Vec<Pipe> = Vec::new();
        // Original pipe index -> (first, last) segment index.
        let mut span = Vec::with_capacity(self.pipes.len());

        for p in &self.pipes {
            let mut segs = (p.length / delta).ceil().max(1.0) as usize;
            if p.length / segs as f64 >= delta {
                segs += 1; // exact division still violates the strict bound
            }
            let first = pipes.len();
            if segs == 1 {
                pipes.push(p.clone());
                span.push((first, first));
                continue;
            }
            let seg_len = p.length / segs as f64;
            let dmin = self.nodes[p.from]
                .density_min
                .min(self.nodes[p.to].density_min);
            let mut tail = p.from;
            for s in 0..segs {
                let head = if s + 1 == segs {
                    p.to
                } else {
                    nodes.push(Node {
                        id: format!("{}#{}", p.id, s + 1),
                        density_min: dmin,
                        density_max: p.density_max,
                        slack_density: None,
                    });
                    nodes.len() - 1
                };
                pipes.push(Pipe {
                    id: format!("{}.{}", p.id, s + 1),
                    from: tail,
                    to: head,
                    length: seg_len,
                    ..p.clone()
                });
                tail = head;
            }
            span.push((first, pipes.len() - 1));
        }

        let compressors = self
            .compressors
            .iter()
            .map(|c| {
                let (first, last) = span[c.edge];
                Compressor {
                    edge: if c.at_outlet { last } else { first },
                    ..c.clone()
                }
            })
            .collect();

        Ok(Network {
            units: self.units,
            gas: self.gas,
            scaling: self.scaling,
            nodes,
            pipes,
            compressors,
            n_slack: self.n_slack,
        })
    }

    /// Rescales all SI fields by the reference scales: lengths divide by ℓ0,
    /// densities by ρ0. Areas stay in m² (the flux scale a·ρ0 together with
    /// the 1 m² reference area carries mass flows), and compressor power data
    /// stays in SI; the stored scaling converts flows when power constraints
    /// are formed.
    pub fn nondimensionalize(&self, s: Scaling) -> Result<Network> {
        if self.units != Units::Si {
            return Err(Error::InvalidInput(
                "network is already dimensionless".into(),
            ));
        }
        let mut net = self.clone();
        net.units = Units::Nondim;
        net.scaling = Some(s);
        net.rescale(1.0 / s.length, 1.0 / s.density);
        Ok(net)
    }

    /// Inverse of [`Network::nondimensionalize`] using the stored scales.
    pub fn redimensionalize(&self) -> Result<Network> {
        let s = match (self.units, self.scaling) {
            (Units::Nondim, Some(s)) => s,
            _ => {
                return Err(Error::InvalidInput(
                    "network carries no scaling to undo".into(),
                ))
            }
        };
        let mut net = self.clone();
        net.units = Units::Si;
        net.scaling = None;
        net.rescale(s.length, s.density);
        Ok(net)
    }

    fn rescale(&mut self, length: f64, density: f64) {
        for n in &mut self.nodes {
            n.density_min *= density;
            n.density_max *= density;
            if let Some(p) = &mut n.slack_density {
                *p = p.scaled(density);
            }
        }
        for p in &mut self.pipes {
            p.length *= length;
            p.diameter *= length;
            p.density_max *= density;
        }
    }

    /// Incidence structure of a dimensionless network.
    pub fn incidence(&self) -> Result<IncidenceMatrices> {
        if self.units != Units::Nondim {
            return Err(Error::InvalidInput(
                "incidence diagonals are defined on the dimensionless network".into(),
            ));
        }
        let ends = self.pipes.iter().map(|p| (p.from, p.to)).collect();
        Ok(IncidenceMatrices {
            n_slack: self.n_slack,
            n_free: self.n_free(),
            ends,
            lambda: self.pipes.iter().map(|p| p.length).collect(),
            kappa: self.pipes.iter().map(|p| p.friction / p.diameter).collect(),
            area: self.pipes.iter().map(|p| p.area).collect(),
        })
    }

    /// Expands per-compressor ratio values into per-edge boost pairs
    /// (tail end, head end); uncompressed ends get ratio 1.
    pub fn fill_edge_ratios(&self, alpha: &[f64], tail: &mut [f64], head: &mut [f64]) {
        debug_assert_eq!(alpha.len(), self.compressors.len());
        tail.fill(1.0);
        head.fill(1.0);
        for (c, &a) in self.compressors.iter().zip(alpha) {
            if c.at_outlet {
                head[c.edge] = a;
            } else {
                tail[c.edge] = a;
            }
        }
    }
}

/// Graph topology plus the diagonal coefficient matrices of the lumped model.
///
/// Node rows follow the slack-first ordering: rows `0..n_slack` form the σ
/// partition, rows `n_slack..` the free partition. Edge k runs
/// `ends[k].0 → ends[k].1`.
#[derive(Debug, Clone)]
pub struct IncidenceMatrices {
    pub n_slack: usize,
    pub n_free: usize,
    pub ends: Vec<(usize, usize)>,
    /// Λ: dimensionless segment lengths.
    pub lambda: Vec<f64>,
    /// K: friction λ over dimensionless diameter (= λℓ0/D in SI terms).
    pub kappa: Vec<f64>,
    /// X: dimensionless cross-sectional areas.
    pub area: Vec<f64>,
}

impl IncidenceMatrices {
    pub fn n_nodes(&self) -> usize {
        self.n_slack + self.n_free
    }

    pub fn n_edges(&self) -> usize {
        self.ends.len()
    }

    /// Signed incidence matrix A: +1 where an edge enters a node, −1 where it
    /// leaves. Rows cover all nodes in slack-first order.
    pub fn signed(&self) -> Csc {
        self.weighted(&vec![1.0; self.n_edges()], &vec![1.0; self.n_edges()])
    }

    /// Weighted incidence matrix B for given per-edge boost ratios: the −1
    /// entries of A scale by the tail-end ratio, the +1 entries by the
    /// head-end ratio. With all ratios 1, B = A.
    pub fn weighted(&self, tail: &[f64], head: &[f64]) -> Csc {
        let mut coo = Coo::new(self.n_nodes(), self.n_edges());
        for (k, &(i, j)) in self.ends.iter().enumerate() {
            coo.push(i, k, -tail[k]);
            coo.push(j, k, head[k]);
        }
        coo.to_csc()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gas() -> GasProperties {
        GasProperties {
            sound_speed: 377.0,
            compressibility: 0.9,
            gas_constant: 518.0,
            temperature: 288.0,
        }
    }

    fn node(id: &str) -> Node {
        Node {
            id: id.into(),
            density_min: 10.0,
            density_max: 90.0,
            slack_density: None,
        }
    }

    fn slack(id: &str, sigma: f64) -> Node {
        Node {
            slack_density: Some(Profile::Constant(sigma)),
            ..node(id)
        }
    }

    fn pipe(id: &str, from: &str, to: &str, length: f64) -> PipeSpec {
        PipeSpec {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            length,
            diameter: 0.5,
            friction: 0.01,
            area: None,
            density_max: 80.0,
        }
    }

    fn line(lengths: &[f64]) -> Network {
        let mut nodes = vec![slack("n0", 50.0)];
        let mut pipes = Vec::new();
        for (i, &l) in lengths.iter().enumerate() {
            nodes.push(node(&format!("n{}", i + 1)));
            pipes.push(pipe(
                &format!("p{i}"),
                &format!("n{i}"),
                &format!("n{}", i + 1),
                l,
            ));
        }
        Network::assemble(gas(), Units::Si, nodes, pipes, vec![]).unwrap()
    }

    #[test]
    fn assemble_orders_slack_first() {
        let nodes = vec![node("b"), slack("s", 45.0), node("a")];
        let pipes = vec![pipe("p0", "b", "s", 1e4), pipe("p1", "s", "a", 1e4)];
        let net = Network::assemble(gas(), Units::Si, nodes, pipes, vec![]).unwrap();
        assert_eq!(net.n_slack(), 1);
        assert_eq!(net.nodes[0].id, "s");
        // Stable input order within the non-slack group.
        assert_eq!(net.nodes[1].id, "b");
        assert_eq!(net.nodes[2].id, "a");
        assert_eq!(net.pipes[0].from, 1);
        assert_eq!(net.pipes[0].to, 0);
    }

    #[test]
    fn assemble_rejects_bad_inputs() {
        let ok_nodes = || vec![slack("s", 45.0), node("a")];
        // Disconnected.
        let nodes = vec![slack("s", 45.0), node("a"), node("b")];
        let err = Network::assemble(gas(), Units::Si, nodes, vec![pipe("p", "s", "a", 1e4)], vec![]);
        assert!(matches!(err, Err(Error::InvalidNetwork(_))));
        // No slack node.
        let err = Network::assemble(
            gas(),
            Units::Si,
            vec![node("a"), node("b")],
            vec![pipe("p", "a", "b", 1e4)],
            vec![],
        );
        assert!(matches!(err, Err(Error::InvalidNetwork(_))));
        // Unknown endpoint.
        let err = Network::assemble(gas(), Units::Si, ok_nodes(), vec![pipe("p", "s", "zz", 1e4)], vec![]);
        assert!(matches!(err, Err(Error::InvalidNetwork(_))));
        // Zero diameter.
        let mut bad = pipe("p", "s", "a", 1e4);
        bad.diameter = 0.0;
        let err = Network::assemble(gas(), Units::Si, ok_nodes(), vec![bad], vec![]);
        assert!(matches!(err, Err(Error::InvalidNetwork(_))));
    }

    #[test]
    fn area_defaults_to_disc() {
        let net = line(&[1e4]);
        assert_relative_eq!(net.pipes[0].area, std::f64::consts::PI * 0.25 * 0.25 / 1.0, max_relative = 1e-15);
    }

    #[test]
    fn refine_splits_into_strictly_short_segments() {
        // 50 km at Δ=10 km: exact division bumps to 6 segments of 8.33 km.
        let net = line(&[50e3]).refine(10e3).unwrap();
        assert_eq!(net.pipes.len(), 6);
        assert_eq!(net.nodes.len(), 2 + 5);
        for p in &net.pipes {
            assert!(p.length < 10e3);
        }
        // 10 km at Δ=10 km: the strict bound forces two 5 km halves.
        let net = line(&[10e3]).refine(10e3).unwrap();
        assert_eq!(net.pipes.len(), 2);
        assert_relative_eq!(net.pipes[0].length, 5e3);
        // 47 km: plain ceiling, 5 segments.
        let net = line(&[47e3]).refine(10e3).unwrap();
        assert_eq!(net.pipes.len(), 5);
        assert_relative_eq!(net.pipes[0].length, 9.4e3);
    }

    #[test]
    fn refine_preserves_length_and_is_idempotent() {
        let net = line(&[47e3, 12.3e3, 8e3]);
        let total: f64 = net.pipes.iter().map(|p| p.length).sum();
        let fine = net.refine(10e3).unwrap();
        let fine_total: f64 = fine.pipes.iter().map(|p| p.length).sum();
        assert_relative_eq!(total, fine_total, max_relative = 1e-12);
        let again = fine.refine(10e3).unwrap();
        assert_eq!(again.pipes.len(), fine.pipes.len());
        // Segment chain stays connected tail-to-head.
        for w in fine.pipes.windows(2) {
            if w[0].id.starts_with("p0") && w[1].id.starts_with("p0") {
                assert_eq!(w[0].to, w[1].from);
            }
        }
    }

    #[test]
    fn refine_keeps_compressor_at_its_end() {
        let comp = CompressorSpec {
            id: "c0".into(),
            edge: "p0".into(),
            at_outlet: false,
            ratio_max: 1.5,
            power_max: 1e6,
            gamma: 1.4,
            adiabatic_eff: 0.85,
            mechanical_eff: 0.95,
            gravity: 0.6,
            discharge_temp: 288.0,
        };
        let out_comp = CompressorSpec {
            id: "c1".into(),
            edge: "p1".into(),
            at_outlet: true,
            ..comp.clone()
        };
        let nodes = vec![slack("s", 45.0), node("a"), node("b")];
        let pipes = vec![pipe("p0", "s", "a", 25e3), pipe("p1", "a", "b", 25e3)];
        let net = Network::assemble(gas(), Units::Si, nodes, pipes, vec![comp, out_comp]).unwrap();
        let fine = net.refine(10e3).unwrap();
        // p0 splits into 3 segments at indices 0..3, p1 into 3 at 3..6.
        assert_eq!(fine.compressors[0].edge, 0);
        assert_eq!(fine.pipes[fine.compressors[1].edge].id, "p1.3");
        assert_eq!(fine.pipes[fine.compressors[1].edge].to, fine.node_index("b").unwrap());
    }

    #[test]
    fn interior_nodes_inherit_bounds() {
        let mut nodes = vec![slack("s", 45.0), node("a")];
        nodes[1].density_min = 5.0;
        let net = Network::assemble(gas(), Units::Si, nodes, vec![pipe("p", "s", "a", 30e3)], vec![]).unwrap();
        let fine = net.refine(10e3).unwrap();
        for n in fine.nodes.iter().filter(|n| n.id.contains('#')) {
            assert!(!n.is_slack());
            assert_eq!(n.density_min, 5.0);
            assert_eq!(n.density_max, 80.0);
        }
    }

    #[test]
    fn nondim_round_trip_is_identity() {
        let net = line(&[47e3, 12.3e3]);
        let s = Scaling::new(5000.0, 45.0, 377.0).unwrap();
        let nd = net.nondimensionalize(s).unwrap();
        assert_relative_eq!(nd.pipes[0].length, 47e3 / 5000.0, max_relative = 1e-15);
        assert_relative_eq!(nd.nodes[0].slack_density.as_ref().unwrap().sample(0.0), 50.0 / 45.0, max_relative = 1e-15);
        let back = nd.redimensionalize().unwrap();
        for (a, b) in net.pipes.iter().zip(&back.pipes) {
            assert_relative_eq!(a.length, b.length, max_relative = 1e-12);
            assert_relative_eq!(a.diameter, b.diameter, max_relative = 1e-12);
            assert_relative_eq!(a.area, b.area, max_relative = 1e-12);
            assert_relative_eq!(a.density_max, b.density_max, max_relative = 1e-12);
        }
        for (a, b) in net.nodes.iter().zip(&back.nodes) {
            assert_relative_eq!(a.density_min, b.density_min, max_relative = 1e-12);
            assert_relative_eq!(a.density_max, b.density_max, max_relative = 1e-12);
        }
    }

    #[test]
    fn incidence_columns_sum_to_zero() {
        let s = Scaling::new(5000.0, 45.0, 377.0).unwrap();
        let net = line(&[47e3, 12.3e3, 8e3]).refine(10e3).unwrap().nondimensionalize(s).unwrap();
        let inc = net.incidence().unwrap();
        let a = inc.signed().to_dense();
        for k in 0..inc.n_edges() {
            let col: f64 = (0..inc.n_nodes()).map(|i| a[(i, k)]).sum();
            assert_eq!(col, 0.0);
            let nnz = (0..inc.n_nodes()).filter(|&i| a[(i, k)] != 0.0).count();
            assert_eq!(nnz, 2);
        }
    }

    #[test]
    fn weighted_incidence_scales_signed_entries() {
        let s = Scaling::new(5000.0, 45.0, 377.0).unwrap();
        let nodes = vec![slack("s", 45.0), node("a")];
        let net = Network::assemble(gas(), Units::Si, nodes, vec![pipe("p", "s", "a", 4e3)], vec![])
            .unwrap()
            .nondimensionalize(s)
            .unwrap();
        let inc = net.incidence().unwrap();
        let b = inc.weighted(&[1.0], &[1.2]).to_dense();
        assert_eq!(b[(0, 0)], -1.0);
        assert_eq!(b[(1, 0)], 1.2);
        // Unit ratios give back A.
        let a = inc.signed().to_dense();
        assert_eq!(a[(0, 0)], -1.0);
        assert_eq!(a[(1, 0)], 1.0);
    }

    #[test]
    fn kappa_matches_friction_over_nondim_diameter() {
        let s = Scaling::new(5000.0, 45.0, 377.0).unwrap();
        let net = line(&[4e3]).nondimensionalize(s).unwrap();
        let inc = net.incidence().unwrap();
        // λ ℓ0 / D = 0.01 * 5000 / 0.5 = 100.
        assert_relative_eq!(inc.kappa[0], 100.0, max_relative = 1e-12);
        assert_relative_eq!(inc.lambda[0], 0.8, max_relative = 1e-12);
    }

    #[test]
    fn profile_sampling_is_left_constant_and_wraps() {
        let p = Profile::Hourly(vec![1.0, 2.0, 3.0]);
        assert_eq!(p.sample(0.0), 1.0);
        assert_eq!(p.sample(0.99), 1.0);
        assert_eq!(p.sample(1.0), 2.0);
        assert_eq!(p.sample(2.5), 3.0);
        assert_eq!(p.sample(3.0), 1.0); // wrap
        assert_eq!(p.sample(-0.5), 3.0);
        assert_eq!(p.start(), 1.0);
        assert_eq!(p.end(), 3.0);
    }

    #[test]
    fn compressor_exponent_and_energy() {
        let c = Compressor {
            id: "c".into(),
            edge: 0,
            at_outlet: false,
            ratio_max: 1.5,
            power_max: 1e6,
            gamma: 1.4,
            adiabatic_eff: 1.0,
            mechanical_eff: 1.0,
            gravity: 1.0,
            discharge_temp: 1.0,
        };
        assert_relative_eq!(c.exponent(), 2.0 / 7.0, max_relative = 1e-15);
        assert_relative_eq!(c.energy_coeff(), 286.76 / (2.0 / 7.0), max_relative = 1e-15);
    }
}
