//! Rebalancing policies, evaluated once per epoch on a snapshot of the idle
//! fleet.

use crate::graph::{ArcKind, ChargePath, NodeCharge, ZoneId};
use crate::heuristic::greedy_relocate;
use crate::model::{
    build_problem, solve_exact, Instance, ModelError, RelocationProblem, RelocationSolution,
    SolveStatus,
};
use crate::queueing::{build_rho_table, QueueError, QueueParams};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Duration;
use thiserror::Error;

/// Default wall-clock budget for one exact solve.
pub const EPOCH_TIME_LIMIT: Duration = Duration::from_secs(30);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("snapshot vehicle {vehicle} sits at {position}, outside the graph")]
    Position {
        vehicle: usize,
        position: NodeCharge,
    },
    #[error("snapshot has {got} {what} entries, expected {expected}")]
    Shape {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("committed vehicle heads for {position}, outside the graph")]
    Committed { position: NodeCharge },
    #[error("myopic relocation problem is infeasible")]
    Infeasible,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Queue(#[from] QueueError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Exact,
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum PolicyKind {
    NoRebalance,
    Myopic {
        theta: f64,
        solver: Solver,
    },
    NonMyopicExact {
        theta: f64,
        queue: QueueParams,
    },
    NonMyopicHeuristic {
        theta: f64,
        queue: QueueParams,
    },
    /// Exact non-myopic decisions whose computation time is charged to the
    /// simulated clock.
    NonMyopicOnline {
        theta: f64,
        queue: QueueParams,
    },
    ChargerChasing,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::NoRebalance => "no-rebalance",
            Self::Myopic { .. } => "myopic",
            Self::NonMyopicExact { .. } => "non-myopic-exact",
            Self::NonMyopicHeuristic { .. } => "non-myopic-heuristic",
            Self::NonMyopicOnline { .. } => "non-myopic-online",
            Self::ChargerChasing => "charger-chasing",
        }
    }

    pub fn queue(&self) -> Option<QueueParams> {
        match *self {
            Self::NonMyopicExact { queue, .. }
            | Self::NonMyopicHeuristic { queue, .. }
            | Self::NonMyopicOnline { queue, .. } => Some(queue),
            _ => None,
        }
    }

    pub fn is_online(&self) -> bool {
        matches!(self, Self::NonMyopicOnline { .. })
    }

    fn optimization(&self) -> Option<(f64, Solver)> {
        match *self {
            Self::Myopic { theta, solver } => Some((theta, solver)),
            Self::NonMyopicExact { theta, .. } | Self::NonMyopicOnline { theta, .. } => {
                Some((theta, Solver::Exact))
            }
            Self::NonMyopicHeuristic { theta, .. } => Some((theta, Solver::Heuristic)),
            Self::NoRebalance | Self::ChargerChasing => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdleVehicle {
    pub id: usize,
    pub position: NodeCharge,
    pub battery: f64,
}

/// What the operator sees at an epoch boundary. Only idle vehicles appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub time: u64,
    pub idle: Vec<IdleVehicle>,
    /// Arrival-rate estimates per node-charge, dense by node index.
    pub lambda: Vec<f64>,
    /// Ports currently occupied, per zone.
    pub ports_in_use: Vec<u32>,
    /// Where vehicles already on a rebalancing route will end up. They count
    /// toward coverage but receive no actions.
    #[serde(default)]
    pub committed: Vec<NodeCharge>,
}

impl PolicySnapshot {
    /// Equal apart from the epoch time, so the same decision applies.
    pub fn same_state(&self, other: &Self) -> bool {
        self.idle == other.idle
            && self.lambda == other.lambda
            && self.ports_in_use == other.ports_in_use
            && self.committed == other.committed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceAction {
    pub vehicle: usize,
    /// Zones to visit, starting at the vehicle's current zone.
    pub route: Vec<ZoneId>,
    /// Charging session at a station on the route.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge: Option<ChargePath>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub actions: Vec<RebalanceAction>,
    /// Status of the solve the actions came from, if any.
    pub status: Option<SolveStatus>,
    /// The queueing cap was dropped because the full problem was infeasible.
    pub relaxed: bool,
}

impl Decision {
    fn pass() -> Self {
        Self {
            actions: Vec::new(),
            status: None,
            relaxed: false,
        }
    }
}

pub fn decide_rebalance(
    policy: &PolicyKind,
    snapshot: &PolicySnapshot,
    instance: &Instance,
) -> Result<Decision, PolicyError> {
    decide_rebalance_within(policy, snapshot, instance, EPOCH_TIME_LIMIT)
}

pub fn decide_rebalance_within(
    policy: &PolicyKind,
    snapshot: &PolicySnapshot,
    instance: &Instance,
    time_limit: Duration,
) -> Result<Decision, PolicyError> {
    check_snapshot(snapshot, instance)?;
    if *policy == PolicyKind::ChargerChasing {
        return Ok(Decision {
            actions: charger_chasing(snapshot, instance),
            ..Decision::pass()
        });
    }
    let Some((theta, solver)) = policy.optimization() else {
        return Ok(Decision::pass());
    };
    if snapshot.idle.is_empty() {
        return Ok(Decision::pass());
    }
    let queue = policy.queue().unwrap_or(instance.queue);
    let inst = epoch_instance(snapshot, instance, theta, queue)?;
    let rho = build_rho_table(queue)?;
    let solve = |problem: &RelocationProblem| -> Result<RelocationSolution, ModelError> {
        match solver {
            Solver::Exact => solve_exact(problem, time_limit),
            Solver::Heuristic => Ok(greedy_relocate(problem)),
        }
    };
    let mut relaxed = false;
    let mut problem = build_problem(inst, rho, policy.queue().is_none())?;
    let mut solution = solve(&problem)?;
    if !solution.is_feasible() && !problem.is_myopic() {
        log::debug!(
            "t={} non-myopic problem infeasible, relaxing",
            snapshot.time
        );
        problem = problem.to_myopic();
        solution = solve(&problem)?;
        relaxed = true;
    }
    if !solution.is_feasible() {
        return Err(PolicyError::Infeasible);
    }
    Ok(Decision {
        actions: actions_from_solution(&problem, snapshot, &solution),
        status: Some(solution.status),
        relaxed,
    })
}

fn check_snapshot(snapshot: &PolicySnapshot, instance: &Instance) -> Result<(), PolicyError> {
    let g = &instance.graph;
    for (what, got, expected) in [
        ("lambda", snapshot.lambda.len(), g.node_count()),
        ("port", snapshot.ports_in_use.len(), g.zone_count()),
    ] {
        if got != expected {
            return Err(PolicyError::Shape {
                what,
                got,
                expected,
            });
        }
    }
    for v in &snapshot.idle {
        if !g.contains(v.position) {
            return Err(PolicyError::Position {
                vehicle: v.id,
                position: v.position,
            });
        }
    }
    if let Some(&position) = snapshot.committed.iter().find(|&&nc| !g.contains(nc)) {
        return Err(PolicyError::Committed { position });
    }
    Ok(())
}

/// The relocation instance for one epoch: snapshot positions and rates, with
/// occupied ports removed.
pub fn epoch_instance(
    snapshot: &PolicySnapshot,
    instance: &Instance,
    theta: f64,
    queue: QueueParams,
) -> Result<Instance, PolicyError> {
    check_snapshot(snapshot, instance)?;
    let g = &instance.graph;
    let mut idle = vec![0u32; g.node_count()];
    for nc in snapshot
        .idle
        .iter()
        .map(|v| v.position)
        .chain(snapshot.committed.iter().copied())
    {
        idle[g.index(nc)] += 1;
    }
    let mut inst = instance.with_idle(idle)?;
    inst.lambda = snapshot.lambda.clone();
    inst.theta = theta;
    inst.queue = queue;
    inst.ports = g
        .zones()
        .iter()
        .zip(&snapshot.ports_in_use)
        .map(|(z, &used)| z.station_capacity.saturating_sub(used))
        .collect();
    inst.validate()?;
    Ok(inst)
}

/// Splits the solution's arc flows into one walk per idle vehicle. Vehicles
/// leave a node-charge in id order; a walk ends where no outgoing flow
/// remains. Flow left over at committed vehicles' node-charges is dropped.
pub fn actions_from_solution(
    problem: &RelocationProblem,
    snapshot: &PolicySnapshot,
    solution: &RelocationSolution,
) -> Vec<RebalanceAction> {
    let g = problem.graph();
    let mut remaining = vec![0u32; g.arcs().len()];
    for f in &solution.flows {
        if let Some(&a) = g
            .out_arcs(f.from)
            .iter()
            .find(|&&a| g.arcs()[a].head == f.to)
        {
            remaining[a] += f.flow.round() as u32;
        }
    }
    let mut vehicles = snapshot.idle.clone();
    vehicles.sort_by_key(|v| v.id);
    let mut actions = Vec::new();
    for v in vehicles {
        let mut walk = vec![v.position];
        let mut at = v.position;
        while let Some(&a) = g.out_arcs(at).iter().find(|&&a| remaining[a] > 0) {
            remaining[a] -= 1;
            at = g.arcs()[a].head;
            walk.push(at);
        }
        if walk.len() > 1 {
            actions.push(walk_to_action(problem, v.id, &walk));
        }
    }
    actions
}

fn walk_to_action(
    problem: &RelocationProblem,
    vehicle: usize,
    walk: &[NodeCharge],
) -> RebalanceAction {
    let g = problem.graph();
    let mut route = vec![walk[0].zone];
    let mut charge: Option<ChargePath> = None;
    for pair in walk.windows(2) {
        let (from, to) = (pair[0], pair[1]);
        let kind = g
            .out_arcs(from)
            .iter()
            .map(|&a| &g.arcs()[a])
            .find(|arc| arc.head == to)
            .map(|arc| arc.kind);
        if kind == Some(ArcKind::Charging) {
            match &mut charge {
                Some(c) if c.station == from.zone && c.exit == from.level => c.exit = to.level,
                Some(_) => log::warn!("vehicle {vehicle}: second charging session dropped"),
                None => {
                    charge = Some(ChargePath {
                        station: from.zone,
                        entry: from.level,
                        exit: to.level,
                    })
                }
            }
        } else if route.last() != Some(&to.zone) {
            route.push(to.zone);
        }
    }
    // Pass-through zones are dropped when going direct is no dearer.
    let mut direct = vec![route[0]];
    direct.extend(charge.map(|c| c.station));
    direct.extend(route.last().copied());
    direct.dedup();
    let cost = |r: &[ZoneId]| -> f64 { r.windows(2).map(|p| g.relocation_cost(p[0], p[1])).sum() };
    if cost(&direct) <= cost(&route) + 1e-9 {
        route = direct;
    }
    RebalanceAction {
        vehicle,
        route,
        charge,
    }
}

const FULL: f64 = 1.0 - 1e-9;

/// Sends every idle vehicle below full charge to its nearest station with a
/// free port, lowest battery first. Ties in distance go to the lower station
/// id. Vehicles that find no free port stay put.
pub fn charger_chasing(snapshot: &PolicySnapshot, instance: &Instance) -> Vec<RebalanceAction> {
    let g = &instance.graph;
    let mut free: BTreeMap<ZoneId, u32> = g
        .stations()
        .map(|z| {
            (
                z.id,
                z.station_capacity
                    .saturating_sub(snapshot.ports_in_use[z.id - 1]),
            )
        })
        .collect();
    let mut low: Vec<&IdleVehicle> = snapshot.idle.iter().filter(|v| v.battery < FULL).collect();
    low.sort_by(|a, b| a.battery.total_cmp(&b.battery).then(a.id.cmp(&b.id)));
    let mut actions = Vec::new();
    for v in low {
        let from = v.position.zone;
        let best = free
            .iter()
            .filter(|&(_, &n)| n > 0)
            .map(|(&s, _)| (g.relocation_cost(from, s), s))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let Some((_, station)) = best else { continue };
        *free.get_mut(&station).expect("station listed") -= 1;
        let mut route = vec![from];
        if station != from {
            route.push(station);
        }
        actions.push(RebalanceAction {
            vehicle: v.id,
            route,
            charge: Some(ChargePath {
                station,
                entry: v.position.level,
                exit: g.levels(),
            }),
        });
    }
    actions
}
