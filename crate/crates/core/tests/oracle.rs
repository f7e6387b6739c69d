mod common;

use common::oracle::brute_force_objective;
use common::tiny_instance;
use evshare::model::{build_problem, solve_exact, validate_solution};
use evshare::queueing::build_rho_table;
use std::time::Duration;

#[test]
fn exact_matches_enumeration() {
    let mut feasible = 0;
    for seed in 0..200 {
        let inst = tiny_instance(seed);
        for myopic in [false, true] {
            let rho = build_rho_table(inst.queue).unwrap();
            let want = brute_force_objective(&inst, &rho, myopic);
            let p = build_problem(inst.clone(), rho, myopic).unwrap();
            let s = solve_exact(&p, Duration::from_secs(30)).unwrap();
            match want {
                Some(z) => {
                    feasible += 1;
                    assert!(
                        s.is_feasible(),
                        "seed {seed} myopic {myopic}: exact infeasible, oracle {z}"
                    );
                    assert!(
                        (s.objective - z).abs() < 1e-6,
                        "seed {seed} myopic {myopic}: {} vs {z}",
                        s.objective
                    );
                    assert!(validate_solution(&p, &s).is_empty());
                }
                None => assert!(
                    !s.is_feasible(),
                    "seed {seed} myopic {myopic}: oracle infeasible, exact {}",
                    s.objective
                ),
            }
        }
    }
    println!("{feasible} feasible of 400");
}
