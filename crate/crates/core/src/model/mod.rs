//! Route-capacitated minimum cost flow relocation model.
//!
//! The model combines a p-median style assignment of demand node-charges to
//! placed vehicles, the piecewise-linear queueing intensity cap, and a
//! minimum cost flow that moves idle vehicles on the node-charge graph with a
//! shared port capacity per charging station.

mod exact;
mod solution;

pub use exact::{solve_exact, solve_exact_warm};
pub use solution::{
    evaluate_objective, validate_solution, ArcFlow, Assignment, PathFlow, RelocationSolution,
    ServerSlot, SolveStatus, Violation,
};

use crate::graph::{ArcKind, ChargePath, GraphError, NodeCharge, NodeChargeGraph, ZoneId};
use crate::queueing::{QueueError, QueueParams, RhoTable};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("{what} has {got} entries, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("{what} at {node} is {value}; must be finite and non-negative")]
    Negative {
        what: &'static str,
        node: NodeCharge,
        value: f64,
    },
    #[error("service rate at {node} must be positive, got {value}")]
    ServiceRate { node: NodeCharge, value: f64 },
    #[error("rebalancing weight must be finite and non-negative, got {0}")]
    Theta(f64),
    #[error("penalty constant {big_m} is smaller than the idle fleet {fleet}")]
    BigM { big_m: f64, fleet: u32 },
    #[error("rho table covers {table} servers but the instance allows {instance}")]
    RhoMismatch { table: usize, instance: usize },
    #[error("time limit reached before any feasible solution was found (bound {bound})")]
    TimeLimit { bound: f64 },
    #[error("linear programming engine failed: {0}")]
    Engine(String),
}

/// Exogenous data for one rebalancing epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub graph: NodeChargeGraph,
    /// Arrival rate per node-charge (customers per hour), dense by node index.
    pub lambda: Vec<f64>,
    /// Service rate per node-charge (per hour).
    pub mu: Vec<f64>,
    /// Idle vehicles per node-charge at the start of the epoch.
    pub idle: Vec<u32>,
    pub theta: f64,
    pub queue: QueueParams,
    pub big_m: f64,
    /// Charging ports usable this epoch, per zone. Defaults to the station
    /// capacity; the simulator lowers it for ports already occupied.
    pub ports: Vec<u32>,
}

impl Instance {
    pub fn new(
        graph: NodeChargeGraph,
        lambda: Vec<f64>,
        mu: Vec<f64>,
        idle: Vec<u32>,
        theta: f64,
        queue: QueueParams,
    ) -> Result<Self, ModelError> {
        let fleet: u32 = idle.iter().sum();
        let ports = graph.zones().iter().map(|z| z.station_capacity).collect();
        let inst = Self {
            graph,
            lambda,
            mu,
            idle,
            theta,
            queue,
            big_m: fleet as f64,
            ports,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let v = self.graph.node_count();
        for (what, len) in [
            ("lambda", self.lambda.len()),
            ("mu", self.mu.len()),
            ("idle", self.idle.len()),
        ] {
            if len != v {
                return Err(ModelError::Dimension {
                    what,
                    got: len,
                    expected: v,
                });
            }
        }
        if self.ports.len() != self.graph.zone_count() {
            return Err(ModelError::Dimension {
                what: "ports",
                got: self.ports.len(),
                expected: self.graph.zone_count(),
            });
        }
        for i in 0..v {
            let node = self.graph.node(i);
            if !(self.lambda[i].is_finite() && self.lambda[i] >= 0.0) {
                return Err(ModelError::Negative {
                    what: "arrival rate",
                    node,
                    value: self.lambda[i],
                });
            }
            if !(self.mu[i].is_finite() && self.mu[i] > 0.0) {
                return Err(ModelError::ServiceRate {
                    node,
                    value: self.mu[i],
                });
            }
        }
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            return Err(ModelError::Theta(self.theta));
        }
        self.queue.validate()?;
        let fleet = self.fleet_idle();
        if self.big_m.is_nan() || self.big_m < fleet as f64 {
            return Err(ModelError::BigM {
                big_m: self.big_m,
                fleet,
            });
        }
        Ok(())
    }

    /// B: total idle vehicles.
    pub fn fleet_idle(&self) -> u32 {
        self.idle.iter().sum()
    }

    pub fn lambda_at(&self, nc: NodeCharge) -> f64 {
        self.lambda[self.graph.index(nc)]
    }

    pub fn mu_at(&self, nc: NodeCharge) -> f64 {
        self.mu[self.graph.index(nc)]
    }

    pub fn idle_at(&self, nc: NodeCharge) -> u32 {
        self.idle[self.graph.index(nc)]
    }

    pub fn ports_at(&self, zone: ZoneId) -> u32 {
        self.ports[zone - 1]
    }

    pub fn total_lambda(&self) -> f64 {
        self.lambda.iter().sum()
    }

    /// Same instance with a different idle-vehicle vector; `big_m` follows the
    /// new fleet size.
    pub fn with_idle(&self, idle: Vec<u32>) -> Result<Self, ModelError> {
        let mut inst = self.clone();
        inst.big_m = idle.iter().sum::<u32>() as f64;
        inst.idle = idle;
        inst.validate()?;
        Ok(inst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    /// Every demanded node-charge is assigned once at an adequate level.
    Assignment,
    /// No assignment to a lower-level server.
    Coverage,
    /// The m-th server only after the (m-1)-th.
    Ordering,
    /// Piecewise-linear intensity cap.
    Intensity,
    /// Server count equals the idle fleet.
    FleetSize,
    /// Only occupied node-charges serve demand.
    Linkage,
    NetInflowCap,
    NetOutflowCap,
    Conservation,
    /// Charging arc flow equals the covering path flows.
    PathMatching,
    /// Station port capacity over all charge paths.
    PortCapacity,
    /// Variable domains.
    Domain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Assign,
    Server,
    Flow,
    Path,
}

/// One linear row of the printed constraint system.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub family: Family,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Flat variable layout: X (V×V), Y (V×C), W (arcs), p (station paths).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    nodes: usize,
    servers: usize,
    arcs: usize,
    paths: usize,
}

impl VarLayout {
    pub fn x(&self, demand: usize, server: usize) -> usize {
        demand * self.nodes + server
    }

    /// `m` is 1-based.
    pub fn y(&self, node: usize, m: usize) -> usize {
        self.nodes * self.nodes + node * self.servers + (m - 1)
    }

    pub fn w(&self, arc: usize) -> usize {
        self.nodes * (self.nodes + self.servers) + arc
    }

    pub fn p(&self, path: usize) -> usize {
        self.w(self.arcs) + path
    }

    pub fn len(&self) -> usize {
        self.p(self.paths)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_count(&self) -> usize {
        self.nodes * self.nodes
    }

    pub fn y_count(&self) -> usize {
        self.nodes * self.servers
    }

    pub fn w_count(&self) -> usize {
        self.arcs
    }

    pub fn p_count(&self) -> usize {
        self.paths
    }

    pub fn kind(&self, var: usize) -> VarKind {
        if var < self.x_count() {
            VarKind::Assign
        } else if var < self.w(0) {
            VarKind::Server
        } else if var < self.p(0) {
            VarKind::Flow
        } else {
            VarKind::Path
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelocationProblem {
    instance: Instance,
    rho: RhoTable,
    myopic: bool,
    origins: Vec<usize>,
    layout: VarLayout,
    paths: Vec<ChargePath>,
}

pub fn build_problem(
    instance: Instance,
    rho_table: RhoTable,
    myopic: bool,
) -> Result<RelocationProblem, ModelError> {
    instance.validate()?;
    if rho_table.params.max_servers != instance.queue.max_servers
        || rho_table.rho.len() != instance.queue.max_servers
    {
        return Err(ModelError::RhoMismatch {
            table: rho_table.rho.len(),
            instance: instance.queue.max_servers,
        });
    }
    let g = &instance.graph;
    let origins = (0..g.node_count())
        .filter(|&i| instance.idle[i] > 0)
        .collect();
    let mut paths = Vec::new();
    for st in g.stations() {
        paths.extend(g.enumerate_charge_paths(st.id)?);
    }
    let layout = VarLayout {
        nodes: g.node_count(),
        servers: instance.queue.max_servers,
        arcs: g.arcs().len(),
        paths: paths.len(),
    };
    Ok(RelocationProblem {
        instance,
        rho: rho_table,
        myopic,
        origins,
        layout,
        paths,
    })
}

impl RelocationProblem {
    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    pub fn graph(&self) -> &NodeChargeGraph {
        &self.instance.graph
    }

    pub fn rho_table(&self) -> &RhoTable {
        &self.rho
    }

    pub fn is_myopic(&self) -> bool {
        self.myopic
    }

    pub fn max_servers(&self) -> usize {
        self.layout.servers
    }

    pub fn layout(&self) -> VarLayout {
        self.layout
    }

    /// Node indices holding idle vehicles (the origin set O).
    pub fn origins(&self) -> &[usize] {
        &self.origins
    }

    pub fn is_origin(&self, node: usize) -> bool {
        self.origins.binary_search(&node).is_ok()
    }

    pub fn charge_paths(&self) -> &[ChargePath] {
        &self.paths
    }

    pub fn path_index(&self, path: &ChargePath) -> Option<usize> {
        self.paths.iter().position(|p| p == path)
    }

    /// Same problem with the intensity constraint dropped.
    pub fn to_myopic(&self) -> Self {
        Self {
            myopic: true,
            ..self.clone()
        }
    }

    /// Right-hand side of the intensity constraint at `node` with `m` servers.
    pub fn intensity_capacity(&self, node: usize, m: usize) -> f64 {
        self.rho
            .capacity(m.min(self.layout.servers), self.instance.mu[node])
    }

    /// Demand node indices with positive arrival rate.
    pub fn demand_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.layout.nodes).filter(|&d| self.instance.lambda[d] > 0.0)
    }

    /// Objective coefficient of a variable.
    pub fn cost(&self, var: usize) -> f64 {
        let l = &self.layout;
        match l.kind(var) {
            VarKind::Assign => {
                let (d, s) = (var / l.nodes, var % l.nodes);
                let g = self.graph();
                self.instance.lambda[d] * g.access_cost(g.node(s), g.node(d))
            }
            VarKind::Flow => self.instance.theta * self.graph().arcs()[var - l.w(0)].cost,
            VarKind::Server | VarKind::Path => 0.0,
        }
    }

    /// Node-charge a variable is anchored at, for branching order and reports.
    pub fn anchor(&self, var: usize) -> NodeCharge {
        let l = &self.layout;
        let g = self.graph();
        match l.kind(var) {
            VarKind::Assign => g.node(var / l.nodes),
            VarKind::Server => g.node((var - l.x_count()) / l.servers),
            VarKind::Flow => g.arcs()[var - l.w(0)].tail,
            VarKind::Path => {
                let p = &self.paths[var - l.p(0)];
                NodeCharge::new(p.station, p.entry)
            }
        }
    }

    /// The full constraint system, one row per index combination. Assignment
    /// rows exist only for node-charges with positive demand, empty coverage
    /// rows are omitted, and port capacity is one row per station.
    pub fn constraint_rows(&self) -> Vec<Row> {
        let inst = &self.instance;
        let g = &inst.graph;
        let l = self.layout;
        let v = l.nodes;
        let c = l.servers;
        let mut rows = Vec::new();
        let row = |family, terms, sense, rhs| Row {
            family,
            terms,
            sense,
            rhs,
        };

        for d in 0..v {
            let level = g.node(d).level;
            if inst.lambda[d] > 0.0 {
                let terms = (0..v)
                    .filter(|&s| g.node(s).level >= level)
                    .map(|s| (l.x(d, s), 1.0))
                    .collect();
                rows.push(row(Family::Assignment, terms, Sense::Eq, 1.0));
            }
            let low: Vec<_> = (0..v)
                .filter(|&s| g.node(s).level < level)
                .map(|s| (l.x(d, s), 1.0))
                .collect();
            if !low.is_empty() {
                rows.push(row(Family::Coverage, low, Sense::Eq, 0.0));
            }
        }
        for s in 0..v {
            for m in 2..=c {
                rows.push(row(
                    Family::Ordering,
                    vec![(l.y(s, m), 1.0), (l.y(s, m - 1), -1.0)],
                    Sense::Le,
                    0.0,
                ));
            }
        }
        if !self.myopic {
            for s in 0..v {
                let mu = inst.mu[s];
                let mut terms: Vec<(usize, f64)> = (0..v)
                    .filter(|&d| inst.lambda[d] > 0.0)
                    .map(|d| (l.x(d, s), inst.lambda[d]))
                    .collect();
                for m in 1..=c {
                    terms.push((l.y(s, m), -mu * self.rho.increment(m)));
                }
                rows.push(row(Family::Intensity, terms, Sense::Le, 0.0));
            }
        }
        let all_y = (0..v)
            .flat_map(|s| (1..=c).map(move |m| (l.y(s, m), 1.0)))
            .collect();
        rows.push(row(
            Family::FleetSize,
            all_y,
            Sense::Eq,
            inst.fleet_idle() as f64,
        ));
        for d in 0..v {
            for s in 0..v {
                rows.push(row(
                    Family::Linkage,
                    vec![(l.x(d, s), 1.0), (l.y(s, 1), -1.0)],
                    Sense::Le,
                    0.0,
                ));
            }
        }
        for n in 0..v {
            let nc = g.node(n);
            let mut net: Vec<(usize, f64)> = g.in_arcs(nc).iter().map(|&a| (l.w(a), 1.0)).collect();
            net.extend(g.out_arcs(nc).iter().map(|&a| (l.w(a), -1.0)));
            if !self.is_origin(n) {
                let mut upper = net.clone();
                upper.push((l.y(n, 1), -inst.big_m));
                rows.push(row(Family::NetInflowCap, upper, Sense::Le, 0.0));
                let mut lower: Vec<_> = net.iter().map(|&(i, a)| (i, -a)).collect();
                lower.push((l.y(n, 1), -inst.big_m));
                rows.push(row(Family::NetOutflowCap, lower, Sense::Le, 0.0));
            }
            let mut cons = net;
            cons.extend((1..=c).map(|m| (l.y(n, m), -1.0)));
            rows.push(row(
                Family::Conservation,
                cons,
                Sense::Eq,
                -(inst.idle[n] as f64),
            ));
        }
        for (a, arc) in g.arcs().iter().enumerate() {
            if arc.kind != ArcKind::Charging {
                continue;
            }
            let mut terms: Vec<(usize, f64)> = self
                .paths
                .iter()
                .enumerate()
                .filter(|(_, p)| p.station == arc.tail.zone && p.uses_step_from(arc.tail.level))
                .map(|(k, _)| (l.p(k), 1.0))
                .collect();
            terms.push((l.w(a), -1.0));
            rows.push(row(Family::PathMatching, terms, Sense::Eq, 0.0));
        }
        for st in g.stations() {
            let terms: Vec<_> = self
                .paths
                .iter()
                .enumerate()
                .filter(|(_, p)| p.station == st.id)
                .map(|(k, _)| (l.p(k), 1.0))
                .collect();
            if !terms.is_empty() {
                rows.push(row(
                    Family::PortCapacity,
                    terms,
                    Sense::Le,
                    inst.ports_at(st.id) as f64,
                ));
            }
        }
        rows
    }

    pub fn constraint_count(&self) -> usize {
        self.constraint_rows().len()
    }
}
