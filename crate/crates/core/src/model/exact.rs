use super::solution::{
    evaluate_objective, ArcFlow, Assignment, PathFlow, RelocationSolution, ServerSlot, SolveStatus,
};
use super::{Family, ModelError, RelocationProblem, Sense, VarKind};
use microlp::{
    ComparisonOp, Error as LpError, OptimizationDirection, Problem, Solution, SolveOutcome,
    Variable,
};
use std::time::{Duration, Instant};

const ONE: f64 = 0.5;

/// Variables the solver actually sees. Assignments to lower-level servers and
/// from zero-demand node-charges are fixed at zero and left out.
fn live(problem: &RelocationProblem, var: usize) -> bool {
    let l = problem.layout();
    match l.kind(var) {
        VarKind::Assign => {
            let g = problem.graph();
            let n = g.node_count();
            let (d, s) = (var / n, var % n);
            problem.instance().lambda[d] > 0.0 && g.node(s).level >= g.node(d).level
        }
        _ => true,
    }
}

struct Formulation {
    lp: Problem,
    vars: Vec<Option<Variable>>,
}

/// Upper bound on the demand the whole fleet can absorb: the best split of the
/// vehicles into stacks of at most `max_servers`, at the largest service rate.
fn fleet_capacity(problem: &RelocationProblem) -> f64 {
    let inst = problem.instance();
    let rho = problem.rho_table();
    let fleet = inst.fleet_idle() as usize;
    let mut best = vec![0.0f64; fleet + 1];
    for b in 1..=fleet {
        best[b] = (1..=b.min(problem.max_servers()))
            .map(|m| rho.rho(m) + best[b - m])
            .fold(0.0, f64::max);
    }
    best[fleet] * inst.mu.iter().copied().fold(0.0, f64::max)
}

fn formulate(problem: &RelocationProblem) -> Option<Formulation> {
    if !problem.is_myopic() {
        let demand: f64 = problem.instance().lambda.iter().sum();
        if demand > fleet_capacity(problem) * (1.0 + 1e-12) {
            return None;
        }
    }
    let l = problem.layout();
    let fleet = problem.instance().fleet_idle() as f64;
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Option<Variable>> = (0..l.len())
        .map(|v| {
            live(problem, v).then(|| {
                let hi = match l.kind(v) {
                    VarKind::Assign | VarKind::Server => 1.0,
                    VarKind::Flow | VarKind::Path => fleet,
                };
                lp.add_var(problem.cost(v), (0.0, hi))
            })
        })
        .collect();
    for row in problem.constraint_rows() {
        if row.family == Family::Coverage {
            continue;
        }
        let terms: Vec<(Variable, f64)> = row
            .terms
            .iter()
            .filter_map(|&(v, a)| vars[v].map(|lv| (lv, a)))
            .collect();
        if terms.is_empty() {
            let ok = match row.sense {
                Sense::Le => 0.0 <= row.rhs,
                Sense::Eq => row.rhs == 0.0,
                Sense::Ge => 0.0 >= row.rhs,
            };
            if !ok {
                return None;
            }
            continue;
        }
        let op = match row.sense {
            Sense::Le => ComparisonOp::Le,
            Sense::Eq => ComparisonOp::Eq,
            Sense::Ge => ComparisonOp::Ge,
        };
        lp.add_constraint(terms, op, row.rhs);
    }
    Some(Formulation { lp, vars })
}

/// One bound change on the path from the root to a search node.
#[derive(Debug, Clone, Copy)]
enum Branch {
    Fix(Variable, f64),
    AtMost(Variable, f64),
    AtLeast(Variable, f64),
}

fn apply(sol: Solution, b: Branch) -> Result<Option<Solution>, ModelError> {
    let outcome = match b {
        Branch::Fix(v, x) => sol.fix_var(v, x),
        Branch::AtMost(v, x) => sol.add_constraint([(v, 1.0)], ComparisonOp::Le, x),
        Branch::AtLeast(v, x) => sol.add_constraint([(v, 1.0)], ComparisonOp::Ge, x),
    };
    match outcome {
        Ok(SolveOutcome::Solution(s)) => Ok(Some(s)),
        Ok(SolveOutcome::Interrupted(_)) => {
            Err(ModelError::Engine("relaxation interrupted".into()))
        }
        Err(LpError::Infeasible) => Ok(None),
        Err(e) => Err(ModelError::Engine(e.to_string())),
    }
}

struct Open {
    path: Vec<Branch>,
    bound: f64,
}

struct Search<'a> {
    problem: &'a RelocationProblem,
    vars: &'a [Option<Variable>],
    /// Live variables in branching-priority groups: binaries, then integers.
    binaries: Vec<usize>,
    integers: Vec<usize>,
}

impl Search<'_> {
    /// Most fractional variable of the first group that has one; ties go to
    /// the lowest anchor zone, then level, then variable index.
    fn pick(&self, sol: &Solution) -> Option<(usize, f64)> {
        for group in [&self.binaries, &self.integers] {
            let mut best: Option<(f64, usize, f64)> = None;
            for &v in group {
                let x = sol.var_value(self.vars[v].expect("live variable"));
                let frac = (x - x.round()).abs();
                if frac <= INT_TOL {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((f, b, _)) => {
                        frac > f + TIE_TOL
                            || (frac > f - TIE_TOL
                                && (self.problem.anchor(v), v) < (self.problem.anchor(b), b))
                    }
                };
                if better {
                    best = Some((frac, v, x));
                }
            }
            if let Some((_, v, x)) = best {
                return Some((v, x));
            }
        }
        None
    }

    /// Near child first (the rounding direction), far child second.
    fn children(&self, v: usize, x: f64) -> (Branch, Branch) {
        let lv = self.vars[v].expect("live variable");
        match self.problem.layout().kind(v) {
            VarKind::Assign | VarKind::Server => {
                if x >= 0.5 {
                    (Branch::Fix(lv, 1.0), Branch::Fix(lv, 0.0))
                } else {
                    (Branch::Fix(lv, 0.0), Branch::Fix(lv, 1.0))
                }
            }
            VarKind::Flow | VarKind::Path => {
                let (lo, hi) = (Branch::AtMost(lv, x.floor()), Branch::AtLeast(lv, x.ceil()));
                if x - x.floor() >= 0.5 {
                    (hi, lo)
                } else {
                    (lo, hi)
                }
            }
        }
    }
}

const INT_TOL: f64 = 1e-6;
const TIE_TOL: f64 = 1e-9;

fn prune_margin(incumbent: f64) -> f64 {
    1e-9 * incumbent.abs().max(1.0)
}

/// Optimal solve of the relocation model, or the best incumbent found within
/// `time_limit` together with the proven lower bound.
pub fn solve_exact(
    problem: &RelocationProblem,
    time_limit: Duration,
) -> Result<RelocationSolution, ModelError> {
    solve_exact_warm(problem, time_limit, None)
}

/// As [`solve_exact`], starting from a known feasible solution as the
/// incumbent.
pub fn solve_exact_warm(
    problem: &RelocationProblem,
    time_limit: Duration,
    warm: Option<&RelocationSolution>,
) -> Result<RelocationSolution, ModelError> {
    let started = Instant::now();
    let Some(f) = formulate(problem) else {
        return Ok(RelocationSolution::infeasible());
    };
    let root = match f.lp.solve() {
        Ok(SolveOutcome::Solution(s)) => s,
        Ok(SolveOutcome::Interrupted(_)) => {
            return Err(ModelError::Engine("root relaxation interrupted".into()))
        }
        Err(LpError::Infeasible) => return Ok(RelocationSolution::infeasible()),
        Err(e) => return Err(ModelError::Engine(e.to_string())),
    };
    let l = problem.layout();
    let (binaries, integers) = (0..l.len())
        .filter(|&v| f.vars[v].is_some())
        .partition(|&v| matches!(l.kind(v), VarKind::Assign | VarKind::Server));
    let search = Search {
        problem,
        vars: &f.vars,
        binaries,
        integers,
    };

    let mut best: Option<RelocationSolution> = warm
        .filter(|w| w.is_feasible() && super::validate_solution(problem, w).is_empty())
        .cloned();
    let mut incumbent = best.as_ref().map_or(f64::INFINITY, |b| b.objective);
    let mut stack: Vec<Open> = Vec::new();
    let mut dive: Option<(Solution, Vec<Branch>)> = Some((root.clone(), Vec::new()));
    let mut nodes = 0u64;
    loop {
        let (sol, path) = match dive.take() {
            Some(d) => d,
            None => {
                let Some(open) = stack.pop() else { break };
                if open.bound >= incumbent - prune_margin(incumbent) {
                    continue;
                }
                let mut s = Some(root.clone());
                for &b in &open.path {
                    s = match s {
                        Some(s) => apply(s, b)?,
                        None => break,
                    };
                }
                match s {
                    Some(s) => (s, open.path),
                    None => continue,
                }
            }
        };
        nodes += 1;
        let obj = sol.objective();
        if obj >= incumbent - prune_margin(incumbent) {
            continue;
        }
        if started.elapsed() > time_limit {
            let bound = stack.iter().map(|o| o.bound).fold(obj, f64::min);
            log::debug!("exact search stopped after {nodes} nodes");
            return match best {
                Some(mut b) => {
                    b.status = SolveStatus::FeasibleWithGap;
                    b.bound = Some(bound);
                    Ok(b)
                }
                None => Err(ModelError::TimeLimit { bound }),
            };
        }
        match search.pick(&sol) {
            None => {
                let value = |v: usize| f.vars[v].map_or(0.0, |lv| sol.var_value(lv));
                let cand = extract(problem, value);
                incumbent = cand.objective;
                best = Some(cand);
            }
            Some((v, x)) => {
                let (near, far) = search.children(v, x);
                let mut far_path = path.clone();
                far_path.push(far);
                stack.push(Open {
                    path: far_path,
                    bound: obj,
                });
                let mut near_path = path;
                near_path.push(near);
                if let Some(s) = apply(sol, near)? {
                    dive = Some((s, near_path));
                }
            }
        }
    }
    log::debug!("exact search finished after {nodes} nodes");
    Ok(match best {
        Some(mut b) => {
            b.status = SolveStatus::Optimal;
            b.bound = None;
            b
        }
        None => RelocationSolution::infeasible(),
    })
}

/// Sparse solution from dense variable values.
pub(crate) fn extract(
    problem: &RelocationProblem,
    value: impl Fn(usize) -> f64,
) -> RelocationSolution {
    let l = problem.layout();
    let g = problem.graph();
    let n = g.node_count();
    let mut out = RelocationSolution::infeasible();
    out.status = SolveStatus::Optimal;
    for d in 0..n {
        for s in 0..n {
            if value(l.x(d, s)) > ONE {
                out.assignments.push(Assignment {
                    demand: g.node(d),
                    server: g.node(s),
                });
            }
        }
    }
    for s in 0..n {
        for m in 1..=problem.max_servers() {
            if value(l.y(s, m)) > ONE {
                out.servers.push(ServerSlot { node: g.node(s), m });
            }
        }
    }
    for (a, arc) in g.arcs().iter().enumerate() {
        let f = value(l.w(a)).round();
        if f > 0.0 {
            out.flows.push(ArcFlow {
                from: arc.tail,
                to: arc.head,
                flow: f,
            });
        }
    }
    for (k, path) in problem.charge_paths().iter().enumerate() {
        let f = value(l.p(k)).round();
        if f > 0.0 {
            out.path_flows.push(PathFlow {
                path: *path,
                flow: f,
            });
        }
    }
    out.objective = evaluate_objective(problem, &out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{expand_graph, NodeCharge, Zone};
    use crate::model::test_support::two_zone;
    use crate::model::{build_problem, validate_solution, Instance};
    use crate::queueing::{build_rho_table, QueueParams};

    const LIMIT: Duration = Duration::from_secs(30);

    #[test]
    fn relocates_toward_demand() {
        for myopic in [true, false] {
            let p = two_zone(myopic);
            let s = solve_exact(&p, LIMIT).unwrap();
            assert_eq!(s.status, SolveStatus::Optimal);
            // Moving costs 0.02 * 5; staying costs 1 * 5 of access time.
            assert!((s.objective - 0.1).abs() < 1e-9, "{}", s.objective);
            assert!(validate_solution(&p, &s).is_empty());
        }
    }

    #[test]
    fn intensity_forces_second_server_or_infeasible() {
        // One vehicle, one server per node, demand beyond its capacity.
        let p = two_zone(false);
        let mut inst = p.instance().clone();
        let d = inst.graph.index(NodeCharge::new(2, 1));
        inst.lambda[d] = 50.0;
        let p = build_problem(inst, p.rho_table().clone(), false).unwrap();
        let s = solve_exact(&p, LIMIT).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
        let s = solve_exact(&p.to_myopic(), LIMIT).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
    }

    #[test]
    fn charging_respects_single_port() {
        // Two vehicles at level 1 of a one-port station, demand only at level 2.
        let g = expand_graph(vec![Zone::station(1, 1)], vec![vec![0.0]], 2, 3.0).unwrap();
        let q = QueueParams::new(0.5, 0, 2).unwrap();
        let mut lambda = vec![0.0; 2];
        lambda[g.index(NodeCharge::new(1, 2))] = 1.0;
        let mut idle = vec![0; 2];
        idle[g.index(NodeCharge::new(1, 1))] = 2;
        let inst = Instance::new(g, lambda, vec![10.0; 2], idle, 0.1, q).unwrap();
        let p = build_problem(inst, build_rho_table(q).unwrap(), true).unwrap();
        let s = solve_exact(&p, LIMIT).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.path_flows.len(), 1);
        assert_eq!(s.path_flows[0].flow, 1.0);
        assert!((s.objective - 0.3).abs() < 1e-9);
        assert!(validate_solution(&p, &s).is_empty());
    }

    #[test]
    fn warm_start_gives_same_optimum() {
        let p = two_zone(false);
        let cold = solve_exact(&p, LIMIT).unwrap();
        let warm = solve_exact_warm(&p, LIMIT, Some(&cold)).unwrap();
        assert!((cold.objective - warm.objective).abs() < 1e-9);
    }
}
