//! Node-charge expanded graph.
//!
//! Every zone is replicated once per discrete charge band. Within a band all
//! ordered zone pairs are joined by spatial arcs; at charging stations an
//! upward arc joins each band to the next one. Level 1 is the lowest usable
//! band and nothing below it is modelled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Zone identifier, contiguous from 1.
pub type ZoneId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("at least one zone is required")]
    NoZones,
    #[error("at least one charge level is required")]
    NoLevels,
    #[error("zone ids must be contiguous from 1; found id {found} at position {position}")]
    ZoneIds { position: usize, found: ZoneId },
    #[error("{what} matrix is {rows}x{cols}, expected {expected}x{expected}")]
    Dimension {
        what: &'static str,
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("negative or non-finite travel time {value} from zone {from} to zone {to}")]
    NegativeTravelTime {
        from: ZoneId,
        to: ZoneId,
        value: f64,
    },
    #[error("travel time from zone {zone} to itself must be zero, got {value}")]
    NonZeroDiagonal { zone: ZoneId, value: f64 },
    #[error("zone {zone}: station capacity must be positive exactly when the zone is a station")]
    StationCapacity { zone: ZoneId },
    #[error("negative or non-finite charge cost {value} at zone {zone}")]
    ChargeCost { zone: ZoneId, value: f64 },
    #[error("zone {0} does not exist")]
    UnknownZone(ZoneId),
    #[error("zone {0} is not a charging station")]
    NotAStation(ZoneId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: ZoneId,
    pub is_station: bool,
    /// Number of charging ports (zero for ordinary zones).
    pub station_capacity: u32,
}

impl Zone {
    pub fn plain(id: ZoneId) -> Self {
        Self {
            id,
            is_station: false,
            station_capacity: 0,
        }
    }

    pub fn station(id: ZoneId, capacity: u32) -> Self {
        Self {
            id,
            is_station: true,
            station_capacity: capacity,
        }
    }
}

/// A (zone, charge level) pair. Levels run from 1 to `|H|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeCharge {
    pub zone: ZoneId,
    pub level: usize,
}

impl NodeCharge {
    pub fn new(zone: ZoneId, level: usize) -> Self {
        Self { zone, level }
    }
}

impl std::fmt::Display for NodeCharge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.zone, self.level)
    }
}

/// Entry and exit level of one charging session at a station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChargePath {
    pub station: ZoneId,
    pub entry: usize,
    pub exit: usize,
}

impl ChargePath {
    pub fn steps(&self) -> usize {
        self.exit - self.entry
    }

    /// Whether the path passes the charging arc leaving `level`.
    pub fn uses_step_from(&self, level: usize) -> bool {
        self.entry <= level && self.exit > level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArcKind {
    Spatial,
    Charging,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub tail: NodeCharge,
    pub head: NodeCharge,
    pub cost: f64,
    pub kind: ArcKind,
}

type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeChargeGraph {
    zones: Vec<Zone>,
    levels: usize,
    access_time: Matrix,
    relocation_time: Option<Matrix>,
    charge_step_cost: Vec<f64>,
    arcs: Vec<Arc>,
    out_arcs: Vec<Vec<usize>>,
    in_arcs: Vec<Vec<usize>>,
}

fn check_matrix(what: &'static str, m: &Matrix, n: usize) -> Result<(), GraphError> {
    if m.len() != n {
        return Err(GraphError::Dimension {
            what,
            rows: m.len(),
            cols: m.first().map_or(0, Vec::len),
            expected: n,
        });
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != n {
            return Err(GraphError::Dimension {
                what,
                rows: m.len(),
                cols: row.len(),
                expected: n,
            });
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(GraphError::NegativeTravelTime {
                    from: i + 1,
                    to: j + 1,
                    value: v,
                });
            }
        }
        if row[i] != 0.0 {
            return Err(GraphError::NonZeroDiagonal {
                zone: i + 1,
                value: row[i],
            });
        }
    }
    Ok(())
}

/// Builds the node-charge graph with a uniform per-step charging cost at every
/// station.
pub fn expand_graph(
    zones: Vec<Zone>,
    travel_time: Matrix,
    levels: usize,
    charge_step_cost: f64,
) -> Result<NodeChargeGraph, GraphError> {
    let costs = zones
        .iter()
        .map(|z| if z.is_station { charge_step_cost } else { 0.0 })
        .collect();
    NodeChargeGraph::build(zones, travel_time, None, levels, costs)
}

impl NodeChargeGraph {
    /// Full constructor: optional relocation-time override and per-zone charge
    /// step costs (ignored at non-station zones).
    pub fn build(
        zones: Vec<Zone>,
        access_time: Matrix,
        relocation_time: Option<Matrix>,
        levels: usize,
        charge_step_cost: Vec<f64>,
    ) -> Result<Self, GraphError> {
        if zones.is_empty() {
            return Err(GraphError::NoZones);
        }
        if levels == 0 {
            return Err(GraphError::NoLevels);
        }
        let n = zones.len();
        for (pos, z) in zones.iter().enumerate() {
            if z.id != pos + 1 {
                return Err(GraphError::ZoneIds {
                    position: pos,
                    found: z.id,
                });
            }
            if z.is_station != (z.station_capacity > 0) {
                return Err(GraphError::StationCapacity { zone: z.id });
            }
        }
        check_matrix("travel time", &access_time, n)?;
        if let Some(r) = &relocation_time {
            check_matrix("relocation time", r, n)?;
        }
        if charge_step_cost.len() != n {
            return Err(GraphError::Dimension {
                what: "charge cost",
                rows: charge_step_cost.len(),
                cols: 1,
                expected: n,
            });
        }
        for (i, &c) in charge_step_cost.iter().enumerate() {
            if !c.is_finite() || c < 0.0 {
                return Err(GraphError::ChargeCost {
                    zone: i + 1,
                    value: c,
                });
            }
        }
        let charge_step_cost: Vec<f64> = charge_step_cost
            .iter()
            .zip(&zones)
            .map(|(&c, z)| if z.is_station { c } else { 0.0 })
            .collect();

        let mut graph = Self {
            zones,
            levels,
            access_time,
            relocation_time,
            charge_step_cost,
            arcs: Vec::new(),
            out_arcs: vec![Vec::new(); n * levels],
            in_arcs: vec![Vec::new(); n * levels],
        };
        let mut arcs = Vec::new();
        for level in 1..=levels {
            for i in 1..=n {
                for j in 1..=n {
                    if i != j {
                        arcs.push(Arc {
                            tail: NodeCharge::new(i, level),
                            head: NodeCharge::new(j, level),
                            cost: graph.relocation_cost(i, j),
                            kind: ArcKind::Spatial,
                        });
                    }
                }
            }
        }
        for z in graph.zones.iter().filter(|z| z.is_station) {
            for level in 1..levels {
                arcs.push(Arc {
                    tail: NodeCharge::new(z.id, level),
                    head: NodeCharge::new(z.id, level + 1),
                    cost: graph.charge_step_cost[z.id - 1],
                    kind: ArcKind::Charging,
                });
            }
        }
        for (a, arc) in arcs.iter().enumerate() {
            let (t, h) = (graph.index(arc.tail), graph.index(arc.head));
            graph.out_arcs[t].push(a);
            graph.in_arcs[h].push(a);
        }
        graph.arcs = arcs;
        Ok(graph)
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn zone(&self, id: ZoneId) -> Result<&Zone, GraphError> {
        id.checked_sub(1)
            .and_then(|i| self.zones.get(i))
            .ok_or(GraphError::UnknownZone(id))
    }

    pub fn zone_count(&self) -> usize {
        self.zones.len()
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn node_count(&self) -> usize {
        self.zones.len() * self.levels
    }

    pub fn stations(&self) -> impl Iterator<Item = &Zone> {
        self.zones.iter().filter(|z| z.is_station)
    }

    /// Dense index of a node-charge: `(zone - 1) * |H| + (level - 1)`.
    pub fn index(&self, nc: NodeCharge) -> usize {
        debug_assert!(self.contains(nc));
        (nc.zone - 1) * self.levels + (nc.level - 1)
    }

    pub fn node(&self, index: usize) -> NodeCharge {
        NodeCharge::new(index / self.levels + 1, index % self.levels + 1)
    }

    pub fn contains(&self, nc: NodeCharge) -> bool {
        (1..=self.zones.len()).contains(&nc.zone) && (1..=self.levels).contains(&nc.level)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeCharge> + '_ {
        (0..self.node_count()).map(|i| self.node(i))
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    /// Indices of arcs leaving `nc` (A⁺).
    pub fn out_arcs(&self, nc: NodeCharge) -> &[usize] {
        &self.out_arcs[self.index(nc)]
    }

    /// Indices of arcs entering `nc` (A⁻).
    pub fn in_arcs(&self, nc: NodeCharge) -> &[usize] {
        &self.in_arcs[self.index(nc)]
    }

    pub fn charging_arcs(&self) -> impl Iterator<Item = (usize, &Arc)> {
        self.arcs
            .iter()
            .enumerate()
            .filter(|(_, a)| a.kind == ArcKind::Charging)
    }

    pub fn charging_arc(&self, station: ZoneId, from_level: usize) -> Option<usize> {
        self.out_arcs(NodeCharge::new(station, from_level))
            .iter()
            .copied()
            .find(|&a| self.arcs[a].kind == ArcKind::Charging)
    }

    pub fn spatial_arc(&self, from: ZoneId, to: ZoneId, level: usize) -> Option<usize> {
        self.out_arcs(NodeCharge::new(from, level))
            .iter()
            .copied()
            .find(|&a| self.arcs[a].kind == ArcKind::Spatial && self.arcs[a].head.zone == to)
    }

    pub fn access_matrix(&self) -> &Matrix {
        &self.access_time
    }

    pub fn relocation_override(&self) -> Option<&Matrix> {
        self.relocation_time.as_ref()
    }

    /// Customer access time τ(from, to) in minutes.
    pub fn travel_time(&self, from: ZoneId, to: ZoneId) -> f64 {
        self.access_time[from - 1][to - 1]
    }

    /// Vehicle relocation time; equals the access time unless overridden.
    pub fn relocation_cost(&self, from: ZoneId, to: ZoneId) -> f64 {
        match &self.relocation_time {
            Some(m) => m[from - 1][to - 1],
            None => self.access_time[from - 1][to - 1],
        }
    }

    pub fn charge_step_cost(&self, station: ZoneId) -> f64 {
        self.charge_step_cost[station - 1]
    }

    pub fn charge_step_costs(&self) -> &[f64] {
        &self.charge_step_cost
    }

    /// All level pairs `(g, h)`, `g < h`, at a station in lexicographic order.
    pub fn enumerate_charge_paths(&self, station: ZoneId) -> Result<Vec<ChargePath>, GraphError> {
        if !self.zone(station)?.is_station {
            return Err(GraphError::NotAStation(station));
        }
        let mut paths = Vec::with_capacity(self.levels * self.levels.saturating_sub(1) / 2);
        for entry in 1..self.levels {
            for exit in entry + 1..=self.levels {
                paths.push(ChargePath {
                    station,
                    entry,
                    exit,
                });
            }
        }
        Ok(paths)
    }

    /// Access cost of demand at `demand` served from `server`; levels play no part.
    pub fn access_cost(&self, server: NodeCharge, demand: NodeCharge) -> f64 {
        self.travel_time(demand.zone, server.zone)
    }

    /// All-pairs shortest relocation times with successor table for path
    /// recovery.
    pub fn relocation_shortest_paths(&self) -> ShortestPaths {
        let n = self.zones.len();
        let mut dist: Matrix = (1..=n)
            .map(|i| (1..=n).map(|j| self.relocation_cost(i, j)).collect())
            .collect();
        let mut next: Vec<Vec<usize>> = (0..n).map(|_| (0..n).collect()).collect();
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = dist[i][k] + dist[k][j];
                    if via < dist[i][j] - 1e-12 {
                        dist[i][j] = via;
                        next[i][j] = next[i][k];
                    }
                }
            }
        }
        ShortestPaths { dist, next }
    }
}

/// Output of Floyd–Warshall over the relocation matrix (0-based internally).
#[derive(Debug, Clone)]
pub struct ShortestPaths {
    dist: Matrix,
    next: Vec<Vec<usize>>,
}

impl ShortestPaths {
    pub fn dist(&self, from: ZoneId, to: ZoneId) -> f64 {
        self.dist[from - 1][to - 1]
    }

    /// Zone sequence from `from` to `to`, both inclusive.
    pub fn path(&self, from: ZoneId, to: ZoneId) -> Vec<ZoneId> {
        let mut out = vec![from];
        let (mut u, v) = (from - 1, to - 1);
        while u != v {
            u = self.next[u][v];
            out.push(u + 1);
        }
        out
    }
}

/// True iff a server at `server` can take demand requesting `demand.level`.
pub fn covers(server: NodeCharge, demand: NodeCharge) -> bool {
    server.level >= demand.level
}
