//! Instance generation, persistence, and service-rate estimation.

use crate::graph::{GraphError, NodeCharge, NodeChargeGraph, Zone};
use crate::model::{Instance, ModelError};
use crate::queueing::{QueueError, QueueParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed instance document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unsupported schema version {found}, expected {SCHEMA_VERSION}")]
    Version { found: u32 },
    #[error("zone {zone}: capacity {value} is negative")]
    Capacity { zone: usize, value: i64 },
    #[error("zone {zone}: capacity {value} does not fit in 32 bits")]
    CapacityRange { zone: usize, value: i64 },
    #[error("{what} has {rows} rows, expected one per zone ({zones})")]
    Shape {
        what: &'static str,
        rows: usize,
        zones: usize,
    },
    #[error("{what} row for zone {zone} has {got} levels, expected {levels}")]
    LevelShape {
        what: &'static str,
        zone: usize,
        got: usize,
        levels: usize,
    },
    #[error("empty duration sample")]
    EmptySample,
    #[error("durations must be finite and positive")]
    BadDuration,
    #[error("invalid generator parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Random instance settings. Defaults follow the standard benchmark scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub zones: usize,
    pub levels: usize,
    pub fleet_fraction: f64,
    pub station_fraction: f64,
    /// Arrival rates are uniform on `[0, lambda_max]` per node-charge.
    pub lambda_max: f64,
    pub theta: f64,
    pub max_servers: usize,
    pub eta: f64,
    pub queue_len: usize,
    /// μ = multiplier · Σλ at every node-charge.
    pub mu_multiplier: f64,
    /// Side of the unit square in minutes of travel.
    pub minutes_per_unit: f64,
    pub charge_step_cost: f64,
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            zones: 10,
            levels: 5,
            fleet_fraction: 0.4,
            station_fraction: 0.1,
            lambda_max: 1.0,
            theta: 0.02,
            max_servers: 3,
            eta: 0.95,
            queue_len: 0,
            mu_multiplier: 1.5,
            minutes_per_unit: 30.0,
            charge_step_cost: 10.0,
            seed: 0,
        }
    }
}

/// Nearest integer with halves rounded up, never below 1.
pub fn round_half_up_min1(x: f64) -> usize {
    ((x + 0.5).floor() as usize).max(1)
}

impl GeneratorParams {
    pub fn with_size(zones: usize, levels: usize, seed: u64) -> Self {
        Self {
            zones,
            levels,
            seed,
            ..Self::default()
        }
    }

    pub fn fleet(&self) -> usize {
        round_half_up_min1(self.fleet_fraction * self.zones as f64)
    }

    pub fn station_count(&self) -> usize {
        round_half_up_min1(self.station_fraction * self.zones as f64).min(self.zones)
    }

    pub fn station_capacity(&self) -> usize {
        round_half_up_min1(self.fleet() as f64 / (self.station_fraction * self.zones as f64))
    }

    fn validate(&self) -> Result<(), InstanceError> {
        let positive = [
            ("fleet_fraction", self.fleet_fraction),
            ("station_fraction", self.station_fraction),
            ("mu_multiplier", self.mu_multiplier),
            ("minutes_per_unit", self.minutes_per_unit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(InstanceError::Params(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.zones == 0 || self.levels == 0 {
            return Err(InstanceError::Params(
                "zones and levels must be at least 1".into(),
            ));
        }
        if !(self.lambda_max.is_finite() && self.lambda_max >= 0.0) {
            return Err(InstanceError::Params(
                "lambda_max must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn euclidean_minutes(points: &[(f64, f64)], scale: f64) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|a| {
            points
                .iter()
                .map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() * scale)
                .collect()
        })
        .collect()
}

pub fn generate_random_instance(params: &GeneratorParams) -> Result<Instance, InstanceError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.zones;
    let points: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
    let mut ids: Vec<usize> = (1..=n).collect();
    ids.shuffle(&mut rng);
    let mut stations = ids[..params.station_count()].to_vec();
    stations.sort_unstable();
    let cap = params.station_capacity() as u32;
    let zones: Vec<Zone> = (1..=n)
        .map(|id| {
            if stations.contains(&id) {
                Zone::station(id, cap)
            } else {
                Zone::plain(id)
            }
        })
        .collect();
    let costs = zones
        .iter()
        .map(|z| {
            if z.is_station {
                params.charge_step_cost
            } else {
                0.0
            }
        })
        .collect();
    let tt = euclidean_minutes(&points, params.minutes_per_unit);
    let graph = NodeChargeGraph::build(zones, tt, None, params.levels, costs)?;
    let v = graph.node_count();
    let lambda: Vec<f64> = (0..v)
        .map(|_| rng.gen::<f64>() * params.lambda_max)
        .collect();
    let total: f64 = lambda.iter().sum();
    // Keep μ positive even when every draw is zero.
    let mu = (params.mu_multiplier * total).max(f64::MIN_POSITIVE);
    let mut idle = vec![0u32; v];
    for _ in 0..params.fleet() {
        idle[rng.gen_range(0..v)] += 1;
    }
    let queue = QueueParams::new(params.eta, params.queue_len, params.max_servers)?;
    Ok(Instance::new(
        graph,
        lambda,
        vec![mu; v],
        idle,
        params.theta,
        queue,
    )?)
}

/// μ = ln 2 / median(durations), durations in hours.
pub fn estimate_service_rate(durations: &[f64]) -> Result<f64, InstanceError> {
    if durations.is_empty() {
        return Err(InstanceError::EmptySample);
    }
    if durations.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(InstanceError::BadDuration);
    }
    let mut d = durations.to_vec();
    d.sort_by(f64::total_cmp);
    let k = d.len();
    let median = if k % 2 == 1 {
        d[k / 2]
    } else {
        0.5 * (d[k / 2 - 1] + d[k / 2])
    };
    Ok(std::f64::consts::LN_2 / median)
}

#[derive(Debug, Serialize, Deserialize)]
struct ZoneDoc {
    id: usize,
    /// Charging ports; zero for ordinary zones.
    capacity: i64,
    #[serde(default)]
    charge_step_cost: f64,
}

/// On-disk layout. Per-node-charge arrays are indexed `[zone - 1][level - 1]`.
#[derive(Debug, Serialize, Deserialize)]
struct InstanceDoc {
    version: u32,
    levels: usize,
    zones: Vec<ZoneDoc>,
    travel_time: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relocation_time: Option<Vec<Vec<f64>>>,
    lambda: Vec<Vec<f64>>,
    mu: Vec<Vec<f64>>,
    idle: Vec<Vec<u32>>,
    theta: f64,
    eta: f64,
    queue_len: usize,
    max_servers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    big_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ports: Option<Vec<u32>>,
}

fn by_zone<T: Copy>(g: &NodeChargeGraph, dense: &[T]) -> Vec<Vec<T>> {
    (1..=g.zone_count())
        .map(|z| {
            (1..=g.levels())
                .map(|h| dense[g.index(NodeCharge::new(z, h))])
                .collect()
        })
        .collect()
}

fn dense<T: Copy>(
    what: &'static str,
    g: &NodeChargeGraph,
    rows: &[Vec<T>],
) -> Result<Vec<T>, InstanceError> {
    if rows.len() != g.zone_count() {
        return Err(InstanceError::Shape {
            what,
            rows: rows.len(),
            zones: g.zone_count(),
        });
    }
    for (z, row) in rows.iter().enumerate() {
        if row.len() != g.levels() {
            return Err(InstanceError::LevelShape {
                what,
                zone: z + 1,
                got: row.len(),
                levels: g.levels(),
            });
        }
    }
    Ok(g.nodes()
        .map(|nc| rows[nc.zone - 1][nc.level - 1])
        .collect())
}

fn to_doc(inst: &Instance) -> InstanceDoc {
    let g = &inst.graph;
    let default_ports: Vec<u32> = g.zones().iter().map(|z| z.station_capacity).collect();
    let fleet = inst.fleet_idle() as f64;
    InstanceDoc {
        version: SCHEMA_VERSION,
        levels: g.levels(),
        zones: g
            .zones()
            .iter()
            .map(|z| ZoneDoc {
                id: z.id,
                capacity: z.station_capacity as i64,
                charge_step_cost: g.charge_step_cost(z.id),
            })
            .collect(),
        travel_time: g.access_matrix().clone(),
        relocation_time: g.relocation_override().cloned(),
        lambda: by_zone(g, &inst.lambda),
        mu: by_zone(g, &inst.mu),
        idle: by_zone(g, &inst.idle),
        theta: inst.theta,
        eta: inst.queue.eta,
        queue_len: inst.queue.queue_len,
        max_servers: inst.queue.max_servers,
        big_m: (inst.big_m != fleet).then_some(inst.big_m),
        ports: (inst.ports != default_ports).then(|| inst.ports.clone()),
    }
}

fn from_doc(doc: InstanceDoc) -> Result<Instance, InstanceError> {
    if doc.version != SCHEMA_VERSION {
        return Err(InstanceError::Version { found: doc.version });
    }
    let mut zones = Vec::with_capacity(doc.zones.len());
    let mut costs = Vec::with_capacity(doc.zones.len());
    for z in &doc.zones {
        if z.capacity < 0 {
            return Err(InstanceError::Capacity {
                zone: z.id,
                value: z.capacity,
            });
        }
        let cap = u32::try_from(z.capacity).map_err(|_| InstanceError::CapacityRange {
            zone: z.id,
            value: z.capacity,
        })?;
        zones.push(if cap > 0 {
            Zone::station(z.id, cap)
        } else {
            Zone::plain(z.id)
        });
        costs.push(z.charge_step_cost);
    }
    let graph = NodeChargeGraph::build(
        zones,
        doc.travel_time,
        doc.relocation_time,
        doc.levels,
        costs,
    )?;
    let lambda = dense("lambda", &graph, &doc.lambda)?;
    let mu = dense("mu", &graph, &doc.mu)?;
    let idle = dense("idle", &graph, &doc.idle)?;
    let queue = QueueParams::new(doc.eta, doc.queue_len, doc.max_servers)?;
    let mut inst = Instance::new(graph, lambda, mu, idle, doc.theta, queue)?;
    if let Some(m) = doc.big_m {
        inst.big_m = m;
    }
    if let Some(p) = doc.ports {
        inst.ports = p;
    }
    inst.validate()?;
    Ok(inst)
}

pub fn instance_to_json(inst: &Instance) -> String {
    let mut s = serde_json::to_string_pretty(&to_doc(inst)).expect("instance serializes");
    s.push('\n');
    s
}

pub fn instance_from_json(text: &str) -> Result<Instance, InstanceError> {
    from_doc(serde_json::from_str(text)?)
}

pub fn save_instance(inst: &Instance, path: &Path) -> Result<(), InstanceError> {
    std::fs::write(path, instance_to_json(inst)).map_err(|source| InstanceError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_instance(path: &Path) -> Result<Instance, InstanceError> {
    let text = std::fs::read_to_string(path).map_err(|source| InstanceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    instance_from_json(&text)
}

/// Node-charges are numbered 1..=24 level by level on the 6-zone test network.
pub fn labelled_node(label: usize, zones: usize) -> NodeCharge {
    NodeCharge::new((label - 1) % zones + 1, (label - 1) / zones + 1)
}

/// Six zones on a line ten minutes apart, four levels, stations at zones 2
/// and 6 with `ports` chargers each, and idle vehicles at node-charges 3, 7
/// and 14. Travel and demand values are a reconstruction, not the original
/// figure data.
pub fn verification_instance(ports: u32) -> Result<Instance, InstanceError> {
    const LAMBDA: [[f64; 6]; 4] = [
        [0.4, 0.6, 0.2, 0.5, 0.3, 0.4],
        [0.8, 0.5, 0.9, 0.6, 1.1, 0.7],
        [1.2, 0.9, 3.8, 2.6, 1.5, 1.0],
        [2.1, 1.4, 2.8, 3.5, 3.9, 1.6],
    ];
    let zones: Vec<Zone> = (1..=6)
        .map(|id| {
            if id == 2 || id == 6 {
                Zone::station(id, ports)
            } else {
                Zone::plain(id)
            }
        })
        .collect();
    let tt = (0..6)
        .map(|i| (0..6).map(|j| 10.0 * (i as f64 - j as f64).abs()).collect())
        .collect();
    let costs = (1..=6)
        .map(|id| if id == 2 || id == 6 { 15.0 } else { 0.0 })
        .collect();
    let graph = NodeChargeGraph::build(zones, tt, None, 4, costs)?;
    let v = graph.node_count();
    let mut lambda = vec![0.0; v];
    for (h, row) in LAMBDA.iter().enumerate() {
        for (z, &l) in row.iter().enumerate() {
            lambda[graph.index(NodeCharge::new(z + 1, h + 1))] = l;
        }
    }
    let mut idle = vec![0; v];
    for label in [3, 7, 14] {
        idle[graph.index(labelled_node(label, 6))] += 1;
    }
    let queue = QueueParams::new(0.95, 0, 3)?;
    let total: f64 = lambda.iter().sum();
    Ok(Instance::new(
        graph,
        lambda,
        vec![3.0 * total; v],
        idle,
        1.0,
        queue,
    )?)
}

/// The small simulation network: the 6-zone line with five levels, 20
/// vehicles, stations at zones 2 and 6 with 8 ports, arrivals uniform on
/// `[0, lambda_max]` per node-charge and hour, and μ = 5 per hour.
pub fn small_network(lambda_max: f64, seed: u64) -> Result<Instance, InstanceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = 5;
    let zones: Vec<Zone> = (1..=6)
        .map(|id| {
            if id == 2 || id == 6 {
                Zone::station(id, 8)
            } else {
                Zone::plain(id)
            }
        })
        .collect();
    let tt = (0..6)
        .map(|i| (0..6).map(|j| 10.0 * (i as f64 - j as f64).abs()).collect())
        .collect();
    let costs = (1..=6)
        .map(|id| if id == 2 || id == 6 { 6.0 } else { 0.0 })
        .collect();
    let graph = NodeChargeGraph::build(zones, tt, None, levels, costs)?;
    let v = graph.node_count();
    let lambda = (0..v).map(|_| rng.gen::<f64>() * lambda_max).collect();
    let mut idle = vec![0; v];
    for _ in 0..20 {
        idle[rng.gen_range(0..v)] += 1;
    }
    let queue = QueueParams::new(0.85, 2, 3)?;
    Ok(Instance::new(
        graph,
        lambda,
        vec![5.0; v],
        idle,
        0.02,
        queue,
    )?)
}
