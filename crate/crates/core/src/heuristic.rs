//! Greedy placement heuristic for the relocation model.
//!
//! All idle vehicles start stacked at the single node-charge with the lowest
//! access plus relocation cost. Each vehicle is then re-placed in turn at the
//! candidate with the largest savings that keeps every demand assignable
//! under the intensity cap and the total port capacity. Flows are built last
//! by routing every vehicle through its cheapest station with a free port.

use crate::graph::{ChargePath, NodeCharge, ZoneId};
use crate::model::{
    evaluate_objective, ArcFlow, Assignment, PathFlow, RelocationProblem, RelocationSolution,
    ServerSlot, SolveStatus,
};
use std::collections::{BTreeMap, BTreeSet};

const TOL: f64 = 1e-9;

/// Savings of placing the current vehicle at each node-charge, dense by node
/// index. Excluded candidates hold `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct SavingsMatrix {
    pub values: Vec<f64>,
}

impl SavingsMatrix {
    /// Candidates by decreasing savings, ties to the lowest zone then level.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len())
            .filter(|&i| self.values[i] > f64::NEG_INFINITY)
            .collect();
        // Node indices are zone-major, so index order is (zone, level) order.
        idx.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        idx
    }
}

/// Best access time from each node-charge to a vehicle covering it; `+inf`
/// when uncovered.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessMatrix {
    pub values: Vec<f64>,
}

impl AccessMatrix {
    fn from_positions(
        problem: &RelocationProblem,
        positions: impl Iterator<Item = usize> + Clone,
    ) -> Self {
        let g = problem.graph();
        let values = g
            .nodes()
            .map(|d| {
                positions
                    .clone()
                    .map(|s| g.node(s))
                    .filter(|s| s.level >= d.level)
                    .map(|s| g.access_cost(s, d))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        Self { values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicState {
    /// Number of vehicles re-placed so far.
    pub k: usize,
    /// Origin node index per vehicle.
    pub origins: Vec<usize>,
    /// Current node index per vehicle.
    pub positions: Vec<usize>,
    /// Candidates rejected for the vehicle being placed.
    pub infeasible: BTreeSet<usize>,
    /// Vehicles above their origin level minus total ports.
    pub excess: i64,
    /// Server per demand node, from the last feasible placement.
    pub assignment: Vec<Option<usize>>,
    /// Access from every vehicle other than the one being placed.
    pub access: AccessMatrix,
    /// Demand assigned to each node-charge.
    pub load: Vec<f64>,
}

impl HeuristicState {
    fn counts(&self, n: usize, skip: Option<usize>) -> Vec<usize> {
        let mut c = vec![0; n];
        for (f, &p) in self.positions.iter().enumerate() {
            if Some(f) != skip {
                c[p] += 1;
            }
        }
        c
    }

    /// Level the next placement must keep, if capacity repair is active.
    pub fn level_filter(&self, problem: &RelocationProblem) -> Option<usize> {
        (self.excess > 0 && self.k < self.origins.len())
            .then(|| problem.graph().node(self.origins[self.k]).level)
    }
}

/// Cost of moving a vehicle from `from` to `to`, through the cheapest station
/// when the target level is higher. Ports are ignored here.
fn relocation_estimate(problem: &RelocationProblem, from: NodeCharge, to: NodeCharge) -> f64 {
    let g = problem.graph();
    if to.level < from.level {
        return f64::INFINITY;
    }
    if to.level == from.level {
        return if from.zone == to.zone {
            0.0
        } else {
            g.relocation_cost(from.zone, to.zone)
        };
    }
    g.stations()
        .map(|st| leg_cost(problem, from, to, st.id))
        .fold(f64::INFINITY, f64::min)
}

fn leg_cost(problem: &RelocationProblem, from: NodeCharge, to: NodeCharge, station: ZoneId) -> f64 {
    let g = problem.graph();
    let hop = |a: ZoneId, b: ZoneId| if a == b { 0.0 } else { g.relocation_cost(a, b) };
    hop(from.zone, station)
        + g.charge_step_cost(station) * (to.level - from.level) as f64
        + hop(station, to.zone)
}

/// Stand-in access time for demand no other vehicle covers.
fn uncovered_penalty(problem: &RelocationProblem) -> f64 {
    let m = problem.graph().access_matrix();
    10.0 * m.iter().flatten().fold(0.0f64, |a, &b| a.max(b)) + 1.0
}

fn total_ports(problem: &RelocationProblem) -> i64 {
    problem
        .graph()
        .stations()
        .map(|s| problem.instance().ports_at(s.id) as i64)
        .sum()
}

fn charging(problem: &RelocationProblem, origin: usize, at: usize) -> bool {
    let g = problem.graph();
    g.node(at).level > g.node(origin).level
}

/// Savings for the vehicle `state.k` given every other vehicle's position.
pub fn compute_savings(state: &HeuristicState, problem: &RelocationProblem) -> SavingsMatrix {
    let inst = problem.instance();
    let g = problem.graph();
    let n = g.node_count();
    let c = problem.max_servers();
    let f = state.k;
    let origin = g.node(state.origins[f]);
    let counts = state.counts(n, Some(f));
    let filter = state.level_filter(problem);
    let uncovered = uncovered_penalty(problem);
    let excess_without =
        state.excess - charging(problem, state.origins[f], state.positions[f]) as i64;
    let values = (0..n)
        .map(|cand| {
            let nc = g.node(cand);
            let blocked = state.infeasible.contains(&cand)
                || nc.level < origin.level
                || filter.is_some_and(|l| nc.level != l)
                || (nc.level > origin.level && excess_without + 1 > 0)
                || counts[cand] >= c;
            if blocked {
                return f64::NEG_INFINITY;
            }
            let reloc = relocation_estimate(problem, origin, nc);
            if !reloc.is_finite() {
                return f64::NEG_INFINITY;
            }
            let (mut gain, mut attracted) = (0.0, 0.0);
            for d in problem.demand_nodes() {
                let dn = g.node(d);
                if nc.level < dn.level {
                    continue;
                }
                let better = state.access.values[d].min(uncovered) - g.access_cost(nc, dn);
                if better > 0.0 {
                    gain += better * inst.lambda[d];
                    attracted += inst.lambda[d];
                }
            }
            let scale = if problem.is_myopic() || attracted <= 0.0 {
                1.0
            } else {
                let m = counts[cand];
                let added = inst.mu[cand] * problem.rho_table().increment(m + 1);
                if added <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                (added / attracted).min(1.0)
            };
            scale * gain - inst.theta * reloc
        })
        .collect();
    SavingsMatrix { values }
}

/// Recomputes the excess-capacity count from current positions.
pub fn repair_capacity(state: &HeuristicState, problem: &RelocationProblem) -> HeuristicState {
    let above = state
        .origins
        .iter()
        .zip(&state.positions)
        .filter(|(&o, &p)| charging(problem, o, p))
        .count() as i64;
    HeuristicState {
        excess: above - total_ports(problem),
        ..state.clone()
    }
}

/// Whole-demand greedy assignment by increasing access time with residual
/// intensity capacity. `None` when some demand cannot be placed.
fn assign(problem: &RelocationProblem, counts: &[usize]) -> Option<(Vec<Option<usize>>, Vec<f64>)> {
    let inst = problem.instance();
    let g = problem.graph();
    let n = g.node_count();
    let c = problem.max_servers();
    let mut residual: Vec<f64> = (0..n)
        .map(|s| {
            if counts[s] == 0 {
                0.0
            } else if problem.is_myopic() {
                f64::INFINITY
            } else {
                problem.intensity_capacity(s, counts[s].min(c))
            }
        })
        .collect();
    let servers: Vec<usize> = (0..n).filter(|&s| counts[s] > 0).collect();
    let mut pairs = Vec::new();
    for d in problem.demand_nodes() {
        for &s in &servers {
            if g.node(s).level >= g.node(d).level {
                pairs.push((g.access_cost(g.node(s), g.node(d)), d, s));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; n];
    let mut load = vec![0.0; n];
    for (_, d, s) in pairs {
        if out[d].is_none() && residual[s] + TOL >= inst.lambda[d] {
            out[d] = Some(s);
            residual[s] -= inst.lambda[d];
            load[s] += inst.lambda[d];
        }
    }
    problem
        .demand_nodes()
        .all(|d| out[d].is_some())
        .then_some((out, load))
}

fn initial_state(problem: &RelocationProblem) -> Option<HeuristicState> {
    let inst = problem.instance();
    let g = problem.graph();
    let n = g.node_count();
    let origins: Vec<usize> = (0..n)
        .flat_map(|i| std::iter::repeat_n(i, inst.idle[i] as usize))
        .collect();
    let b = origins.len();
    let top = problem
        .demand_nodes()
        .map(|d| g.node(d).level)
        .max()
        .unwrap_or(1);
    let access = |v: usize| -> f64 {
        problem
            .demand_nodes()
            .map(|d| inst.lambda[d] * g.access_cost(g.node(v), g.node(d)))
            .sum()
    };
    let reloc = |v: usize| -> f64 {
        origins
            .iter()
            .map(|&o| relocation_estimate(problem, g.node(o), g.node(v)))
            .sum()
    };
    let covering = || (0..n).filter(|&v| g.node(v).level >= top);
    let best = |score: &dyn Fn(usize) -> f64| {
        covering()
            .map(|v| (score(v), v))
            .filter(|(s, _)| s.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, v)| v)
    };
    let stack = best(&|v| access(v) + inst.theta * reloc(v)).or_else(|| best(&access))?;
    if !problem.is_myopic() {
        let cap = problem.intensity_capacity(stack, b.min(problem.max_servers()));
        if inst.total_lambda() > cap + TOL {
            return None;
        }
    }
    let positions = vec![stack; b];
    let mut state = HeuristicState {
        k: 0,
        origins,
        positions,
        infeasible: BTreeSet::new(),
        excess: 0,
        assignment: vec![None; n],
        access: AccessMatrix {
            values: vec![0.0; n],
        },
        load: vec![0.0; n],
    };
    state = repair_capacity(&state, problem);
    Some(state)
}

/// Re-places vehicle `state.k` at its best admissible candidate. Returns
/// false when no candidate keeps every demand assignable.
fn place_next(state: &mut HeuristicState, problem: &RelocationProblem) -> bool {
    let n = problem.graph().node_count();
    let f = state.k;
    let others = (0..state.positions.len())
        .filter(|&v| v != f)
        .map(|v| state.positions[v]);
    state.access = AccessMatrix::from_positions(problem, others);
    state.infeasible.clear();
    let savings = compute_savings(state, problem);
    for cand in savings.ranked() {
        let mut counts = state.counts(n, Some(f));
        counts[cand] += 1;
        if let Some((a, load)) = assign(problem, &counts) {
            state.positions[f] = cand;
            state.assignment = a;
            state.load = load;
            state.k += 1;
            *state = repair_capacity(state, problem);
            return true;
        }
        state.infeasible.insert(cand);
    }
    false
}

/// Greedy solution of the relocation model. Returns an infeasible solution
/// when the stacked start violates the intensity cap or some vehicle has no
/// admissible position.
pub fn greedy_relocate(problem: &RelocationProblem) -> RelocationSolution {
    if problem.instance().fleet_idle() == 0 {
        if problem.demand_nodes().next().is_some() {
            return RelocationSolution::infeasible();
        }
        let mut s = RelocationSolution::infeasible();
        s.status = SolveStatus::Optimal;
        s.objective = 0.0;
        return s;
    }
    let Some(mut state) = initial_state(problem) else {
        return RelocationSolution::infeasible();
    };
    while state.k < state.origins.len() {
        if !place_next(&mut state, problem) {
            return RelocationSolution::infeasible();
        }
    }
    build_solution(problem, &state).unwrap_or_else(RelocationSolution::infeasible)
}

/// Every intermediate state of the placement loop, starting with the stacked
/// placement.
pub fn trace(problem: &RelocationProblem) -> Vec<HeuristicState> {
    let Some(mut state) = initial_state(problem) else {
        return Vec::new();
    };
    let mut out = vec![state.clone()];
    while state.k < state.origins.len() && place_next(&mut state, problem) {
        out.push(state.clone());
    }
    out
}

struct Route {
    arcs: Vec<(NodeCharge, NodeCharge)>,
    path: Option<ChargePath>,
}

fn route(
    problem: &RelocationProblem,
    from: NodeCharge,
    to: NodeCharge,
    ports: &mut [u32],
) -> Option<Route> {
    let g = problem.graph();
    let mut arcs = Vec::new();
    let spatial = |a: ZoneId, b: ZoneId, level: usize, arcs: &mut Vec<_>| {
        if a != b {
            arcs.push((NodeCharge::new(a, level), NodeCharge::new(b, level)));
        }
    };
    if to.level == from.level {
        spatial(from.zone, to.zone, from.level, &mut arcs);
        return Some(Route { arcs, path: None });
    }
    let station = g
        .stations()
        .filter(|s| ports[s.id - 1] > 0)
        .map(|s| (leg_cost(problem, from, to, s.id), s.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))?
        .1;
    ports[station - 1] -= 1;
    spatial(from.zone, station, from.level, &mut arcs);
    for l in from.level..to.level {
        arcs.push((NodeCharge::new(station, l), NodeCharge::new(station, l + 1)));
    }
    spatial(station, to.zone, to.level, &mut arcs);
    Some(Route {
        arcs,
        path: Some(ChargePath {
            station,
            entry: from.level,
            exit: to.level,
        }),
    })
}

fn build_solution(
    problem: &RelocationProblem,
    state: &HeuristicState,
) -> Option<RelocationSolution> {
    let g = problem.graph();
    let n = g.node_count();
    let mut ports = problem.instance().ports.clone();
    let mut flows: BTreeMap<(NodeCharge, NodeCharge), f64> = BTreeMap::new();
    let mut paths: BTreeMap<ChargePath, f64> = BTreeMap::new();
    for (&o, &p) in state.origins.iter().zip(&state.positions) {
        let r = route(problem, g.node(o), g.node(p), &mut ports)?;
        for arc in r.arcs {
            *flows.entry(arc).or_default() += 1.0;
        }
        if let Some(path) = r.path {
            *paths.entry(path).or_default() += 1.0;
        }
    }
    let counts = state.counts(n, None);
    let (assignment, _) = assign(problem, &counts)?;
    let mut sol = RelocationSolution::infeasible();
    sol.status = SolveStatus::Feasible;
    sol.assignments = assignment
        .iter()
        .enumerate()
        .filter_map(|(d, s)| {
            s.map(|s| Assignment {
                demand: g.node(d),
                server: g.node(s),
            })
        })
        .collect();
    sol.servers = counts
        .iter()
        .enumerate()
        .flat_map(|(s, &k)| (1..=k).map(move |m| ServerSlot { node: g.node(s), m }))
        .collect();
    sol.flows = flows
        .into_iter()
        .map(|((from, to), flow)| ArcFlow { from, to, flow })
        .collect();
    sol.path_flows = paths
        .into_iter()
        .map(|(path, flow)| PathFlow { path, flow })
        .collect();
    sol.objective = evaluate_objective(problem, &sol);
    Some(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{expand_graph, Zone};
    use crate::instances::{generate_random_instance, GeneratorParams};
    use crate::model::{build_problem, solve_exact, validate_solution, Instance};
    use crate::queueing::{build_rho_table, QueueParams};
    use std::time::Duration;

    fn nc(z: usize, l: usize) -> NodeCharge {
        NodeCharge::new(z, l)
    }

    /// Zones on a line one minute apart, optional stations with `ports`.
    fn line(
        zones: usize,
        levels: usize,
        stations: &[usize],
        ports: u32,
        lambda: &[(NodeCharge, f64)],
        idle: &[NodeCharge],
        servers: usize,
        myopic: bool,
    ) -> RelocationProblem {
        let z = (1..=zones)
            .map(|id| {
                if stations.contains(&id) {
                    Zone::station(id, ports)
                } else {
                    Zone::plain(id)
                }
            })
            .collect();
        let tt = (0..zones)
            .map(|i| (0..zones).map(|j| (i as f64 - j as f64).abs()).collect())
            .collect();
        let g = expand_graph(z, tt, levels, 1.0).unwrap();
        let v = g.node_count();
        let mut lam = vec![0.0; v];
        for &(n, l) in lambda {
            lam[g.index(n)] = l;
        }
        let mut y = vec![0; v];
        for &n in idle {
            y[g.index(n)] += 1;
        }
        let q = QueueParams::new(0.5, 0, servers).unwrap();
        let inst = Instance::new(g, lam, vec![10.0; v], y, 0.1, q).unwrap();
        build_problem(inst, build_rho_table(q).unwrap(), myopic).unwrap()
    }

    #[test]
    fn single_vehicle_goes_to_massed_demand() {
        let p = line(3, 1, &[], 0, &[(nc(3, 1), 2.0)], &[nc(1, 1)], 1, false);
        let s = greedy_relocate(&p);
        assert_eq!(
            s.servers,
            vec![ServerSlot {
                node: nc(3, 1),
                m: 1
            }]
        );
        assert!(validate_solution(&p, &s).is_empty());
        let e = solve_exact(&p, Duration::from_secs(10)).unwrap();
        assert!((s.objective - e.objective).abs() < 1e-9);
        assert!((s.objective - 0.2).abs() < 1e-9);
    }

    #[test]
    fn zero_demand_keeps_vehicles_in_place() {
        let p = line(3, 2, &[2], 1, &[], &[nc(1, 1), nc(3, 2)], 2, false);
        let s = greedy_relocate(&p);
        assert_eq!(s.objective, 0.0);
        assert!(s.flows.is_empty());
        assert!(validate_solution(&p, &s).is_empty());
    }

    #[test]
    fn savings_hand_computation() {
        // λ = (1, 0, 0) on a 3-zone line; the other vehicle sits at zone 3.
        let p = line(
            3,
            1,
            &[],
            0,
            &[(nc(1, 1), 1.0)],
            &[nc(2, 1), nc(3, 1)],
            2,
            true,
        );
        let mut state = initial_state(&p).unwrap();
        state.positions = vec![p.graph().index(nc(2, 1)), p.graph().index(nc(3, 1))];
        state.access = AccessMatrix::from_positions(&p, std::iter::once(state.positions[1]));
        let s = compute_savings(&state, &p);
        let g = p.graph();
        // Candidate zone 1: access improves from 2 to 0, relocation 1 * θ.
        assert!((s.values[g.index(nc(1, 1))] - (2.0 - 0.1)).abs() < 1e-12);
        // Staying: improvement 1, no relocation.
        assert!((s.values[g.index(nc(2, 1))] - 1.0).abs() < 1e-12);
        assert!((s.values[g.index(nc(3, 1))] + 0.1).abs() < 1e-12);
        state.infeasible.insert(g.index(nc(1, 1)));
        let s = compute_savings(&state, &p);
        assert_eq!(s.values[g.index(nc(1, 1))], f64::NEG_INFINITY);
        assert_eq!(s.ranked()[0], g.index(nc(2, 1)));
    }

    #[test]
    fn full_server_slots_are_excluded() {
        let p = line(
            2,
            1,
            &[],
            0,
            &[(nc(1, 1), 1.0)],
            &[nc(1, 1), nc(2, 1)],
            1,
            false,
        );
        let mut state = initial_state(&p).unwrap();
        let g = p.graph();
        state.positions = vec![g.index(nc(1, 1)), g.index(nc(1, 1))];
        state.k = 1;
        let s = compute_savings(&state, &p);
        assert_eq!(s.values[g.index(nc(1, 1))], f64::NEG_INFINITY);
        assert!(s.values[g.index(nc(2, 1))].is_finite());
    }

    #[test]
    fn excess_counts_charging_vehicles() {
        let idle = [nc(1, 1), nc(2, 1), nc(3, 1)];
        let p = line(3, 2, &[2], 2, &[(nc(1, 2), 1.0)], &idle, 3, true);
        let mut state = initial_state(&p).unwrap();
        let top: Vec<usize> = (1..=3).map(|z| p.graph().index(nc(z, 2))).collect();
        state.positions = top;
        let state = repair_capacity(&state, &p);
        assert_eq!(state.excess, 1);
        assert_eq!(state.level_filter(&p), Some(1));
        let mut none = state.clone();
        none.positions = none.origins.clone();
        assert!(repair_capacity(&none, &p).excess <= 0);
    }

    #[test]
    fn restriction_lifts_once_charging_stops() {
        // Two level-1 vehicles stacked at level 2 with a single port.
        let p = line(
            2,
            2,
            &[1],
            1,
            &[(nc(2, 2), 1.0), (nc(1, 1), 1.0)],
            &[nc(1, 1), nc(2, 1)],
            2,
            true,
        );
        let t = trace(&p);
        assert_eq!(t.len(), 3);
        assert_eq!(t[0].excess, 1);
        assert_eq!(t[0].level_filter(&p), Some(1));
        assert_eq!(p.graph().node(t[1].positions[0]).level, 1);
        assert!(t[1].excess <= 0);
        assert_eq!(t[1].level_filter(&p), None);
        assert_eq!(p.graph().node(t[2].positions[1]).level, 2);
        let s = greedy_relocate(&p);
        assert!(
            validate_solution(&p, &s).is_empty(),
            "{:?}",
            validate_solution(&p, &s)
        );
    }

    #[test]
    fn stacked_start_over_capacity_is_infeasible() {
        // One server absorbs 10 * sqrt(0.5) ≈ 7.07 per hour.
        let p = line(2, 1, &[], 0, &[(nc(1, 1), 8.0)], &[nc(2, 1)], 1, false);
        assert_eq!(greedy_relocate(&p).status, SolveStatus::Infeasible);
        assert!(greedy_relocate(&p.to_myopic()).is_feasible());
    }

    #[test]
    fn never_beats_exact_and_always_valid() {
        for seed in 0..12 {
            let mut params = GeneratorParams::with_size(3, 3, seed);
            params.fleet_fraction = 0.67;
            params.mu_multiplier = 2.0 + seed as f64 * 0.5;
            let inst = generate_random_instance(&params).unwrap();
            let rho = build_rho_table(inst.queue).unwrap();
            for myopic in [false, true] {
                let p = build_problem(inst.clone(), rho.clone(), myopic).unwrap();
                let h = greedy_relocate(&p);
                let e = solve_exact(&p, Duration::from_secs(30)).unwrap();
                if h.is_feasible() {
                    assert!(validate_solution(&p, &h).is_empty(), "seed {seed}");
                    assert!(h.objective >= e.objective - 1e-6, "seed {seed}");
                    assert!((h.objective - evaluate_objective(&p, &h)).abs() < 1e-9);
                }
                if myopic {
                    assert!(h.is_feasible(), "myopic seed {seed}");
                }
            }
        }
    }

    #[test]
    fn access_never_worsens_while_stack_is_held() {
        let inst = generate_random_instance(&GeneratorParams::with_size(10, 5, 3)).unwrap();
        let rho = build_rho_table(inst.queue).unwrap();
        let p = build_problem(inst, rho, false).unwrap();
        let t = trace(&p);
        assert!(t.len() > 2);
        let full =
            |s: &HeuristicState| AccessMatrix::from_positions(&p, s.positions.iter().copied());
        for w in t[..t.len() - 1].windows(2) {
            let (a, b) = (full(&w[0]), full(&w[1]));
            assert!(a.values.iter().zip(&b.values).all(|(x, y)| y <= x));
        }
    }

    #[test]
    fn deterministic() {
        let inst = generate_random_instance(&GeneratorParams::with_size(10, 5, 11)).unwrap();
        let rho = build_rho_table(inst.queue).unwrap();
        let p = build_problem(inst, rho, false).unwrap();
        assert_eq!(greedy_relocate(&p), greedy_relocate(&p));
    }
}
