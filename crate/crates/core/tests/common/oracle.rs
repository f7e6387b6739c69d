//! Brute-force optimum of the relocation model on tiny instances.
//!
//! Every placement of the idle fleet (at most `C` per node-charge) is tried.
//! For each one the cheapest way to move the vehicles there is found by
//! enumerating simple routes through the node-charge graph, and the cheapest
//! demand assignment by enumerating every server choice per demand.

use evshare::graph::{ArcKind, NodeCharge};
use evshare::model::Instance;
use evshare::queueing::RhoTable;
use std::collections::HashMap;

const CAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Route {
    cost: f64,
    /// Charging steps used, as (station, from level).
    steps: Vec<(usize, usize)>,
}

/// Cheapest route per (destination, set of charging steps), from one origin.
fn routes_from(inst: &Instance, origin: usize) -> Vec<Vec<Route>> {
    let g = &inst.graph;
    let v = g.node_count();
    let mut best: Vec<HashMap<Vec<(usize, usize)>, f64>> = vec![HashMap::new(); v];
    let mut seen = vec![false; v];
    let mut steps = Vec::new();
    dfs(inst, origin, 0.0, &mut seen, &mut steps, &mut best);
    best.into_iter()
        .map(|m| {
            let mut r: Vec<Route> = m
                .into_iter()
                .map(|(steps, cost)| Route { cost, steps })
                .collect();
            r.sort_by(|a, b| {
                a.cost
                    .total_cmp(&b.cost)
                    .then_with(|| a.steps.cmp(&b.steps))
            });
            r
        })
        .collect()
}

fn dfs(
    inst: &Instance,
    node: usize,
    cost: f64,
    seen: &mut [bool],
    steps: &mut Vec<(usize, usize)>,
    best: &mut [HashMap<Vec<(usize, usize)>, f64>],
) {
    let g = &inst.graph;
    seen[node] = true;
    let mut key = steps.clone();
    key.sort_unstable();
    let slot = best[node].entry(key).or_insert(f64::INFINITY);
    if cost < *slot {
        *slot = cost;
    }
    for &a in g.out_arcs(g.node(node)) {
        let arc = &g.arcs()[a];
        let head = g.index(arc.head);
        if seen[head] {
            continue;
        }
        let charging = arc.kind == ArcKind::Charging;
        if charging {
            steps.push((arc.tail.zone, arc.tail.level));
        }
        dfs(inst, head, cost + inst.theta * arc.cost, seen, steps, best);
        if charging {
            steps.pop();
        }
    }
    seen[node] = false;
}

/// Ports a set of charging steps needs: at each station, one per level where
/// the number of vehicles charging rises.
fn ports_ok(inst: &Instance, steps: &[(usize, usize)]) -> bool {
    let g = &inst.graph;
    g.stations().all(|st| {
        let mut used = 0u32;
        let mut prev = 0u32;
        for h in 1..g.levels() {
            let f = steps.iter().filter(|&&s| s == (st.id, h)).count() as u32;
            used += f.saturating_sub(prev);
            prev = f;
        }
        used <= inst.ports_at(st.id)
    })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// Cheapest feasible relocation from the idle vehicles to `counts`.
fn relocation_cost(inst: &Instance, routes: &[Vec<Vec<Route>>], counts: &[u32]) -> Option<f64> {
    let origins: Vec<usize> = (0..counts.len())
        .flat_map(|n| std::iter::repeat_n(n, inst.idle[n] as usize))
        .collect();
    let dests: Vec<usize> = (0..counts.len())
        .flat_map(|n| std::iter::repeat_n(n, counts[n] as usize))
        .collect();
    let mut best: Option<f64> = None;
    for perm in permutations(dests.len()) {
        let options: Vec<&[Route]> = origins
            .iter()
            .zip(&perm)
            .map(|(&o, &k)| routes[o][dests[k]].as_slice())
            .collect();
        combine(inst, &options, 0, 0.0, &mut Vec::new(), &mut best);
    }
    best
}

fn combine(
    inst: &Instance,
    options: &[&[Route]],
    k: usize,
    cost: f64,
    steps: &mut Vec<(usize, usize)>,
    best: &mut Option<f64>,
) {
    if k == options.len() {
        if ports_ok(inst, steps) && best.is_none_or(|b| cost < b) {
            *best = Some(cost);
        }
        return;
    }
    for r in options[k] {
        let len = steps.len();
        steps.extend_from_slice(&r.steps);
        combine(inst, options, k + 1, cost + r.cost, steps, best);
        steps.truncate(len);
    }
}

/// Cheapest assignment of every demanded node-charge to one occupied node at
/// the same or a higher level, within the intensity caps unless `myopic`.
fn assignment_cost(inst: &Instance, rho: &RhoTable, counts: &[u32], myopic: bool) -> Option<f64> {
    let demands: Vec<usize> = (0..counts.len())
        .filter(|&d| inst.lambda[d] > 0.0)
        .collect();
    let servers: Vec<usize> = (0..counts.len()).filter(|&s| counts[s] > 0).collect();
    let caps: Vec<f64> = servers
        .iter()
        .map(|&s| {
            if myopic {
                f64::INFINITY
            } else {
                inst.mu[s] * rho.rho(counts[s] as usize)
            }
        })
        .collect();
    let mut load = vec![0.0; servers.len()];
    let mut best = None;
    assign(
        inst, &demands, &servers, &caps, 0, 0.0, &mut load, &mut best,
    );
    best
}

#[allow(clippy::too_many_arguments)]
fn assign(
    inst: &Instance,
    demands: &[usize],
    servers: &[usize],
    caps: &[f64],
    k: usize,
    cost: f64,
    load: &mut [f64],
    best: &mut Option<f64>,
) {
    let g = &inst.graph;
    if k == demands.len() {
        if best.is_none_or(|b| cost < b) {
            *best = Some(cost);
        }
        return;
    }
    let d = demands[k];
    let (dn, lam): (NodeCharge, f64) = (g.node(d), inst.lambda[d]);
    for (i, &s) in servers.iter().enumerate() {
        let sn = g.node(s);
        if sn.level < dn.level || load[i] + lam > caps[i] + CAP_TOL {
            continue;
        }
        load[i] += lam;
        let c = cost + lam * g.access_cost(sn, dn);
        assign(inst, demands, servers, caps, k + 1, c, load, best);
        load[i] -= lam;
    }
}

fn placements(v: usize, fleet: u32, cap: u32) -> Vec<Vec<u32>> {
    fn go(n: usize, left: u32, cap: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == n {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for c in 0..=left.min(cap) {
            cur.push(c);
            go(n, left - c, cap, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(v, fleet, cap, &mut Vec::new(), &mut out);
    out
}

/// Optimal objective, or `None` if no placement is feasible.
pub fn brute_force_objective(inst: &Instance, rho: &RhoTable, myopic: bool) -> Option<f64> {
    let v = inst.graph.node_count();
    let routes: Vec<Vec<Vec<Route>>> = (0..v)
        .map(|o| {
            if inst.idle[o] > 0 {
                routes_from(inst, o)
            } else {
                Vec::new()
            }
        })
        .collect();
    let cap = inst.queue.max_servers as u32;
    let mut best: Option<f64> = None;
    for counts in placements(v, inst.fleet_idle(), cap) {
        let Some(a) = assignment_cost(inst, rho, &counts, myopic) else {
            continue;
        };
        if best.is_some_and(|b| a >= b) {
            continue;
        }
        if let Some(r) = relocation_cost(inst, &routes, &counts) {
            let total = a + r;
            if best.is_none_or(|b| total < b) {
                best = Some(total);
            }
        }
    }
    best
}
