use std::time::Duration;

use coevo_core::execenv::{
    build_passing_matrix, Archetype, ExecError, Executor, ExternalExecutor, Outcome, ProblemShape, SolutionArtifact,
    SyntheticWorld, TestArtifact, TestKind, WorldConfig,
};
use coevo_core::matrix::rank;
use coevo_testkit::scripted_backend;

fn world(seed: u64) -> SyntheticWorld {
    SyntheticWorld::generate(seed, WorldConfig::default())
}

fn tests_of(pid: &str, kind: TestKind, n: usize) -> Vec<TestArtifact> {
    (0..n).map(|j| TestArtifact::new(format!("{pid}/{kind}/t{j}"), kind, pid)).collect()
}

/// Observed pass rate of wrong solutions stays within 3σ of the configured
/// rate, per test kind.
#[test]
fn wrong_solution_pass_rates_match_configuration() {
    let w = world(41);
    let c = w.config().clone();
    for (kind, want) in [
        (TestKind::WrongSemantics, c.wrong_semantics_pass_prob),
        (TestKind::Weak, 1.0 - c.weak_fail_prob),
        (TestKind::Strong, 1.0 - c.strong_fail_prob),
    ] {
        let mut n = 0usize;
        let mut pass = 0usize;
        for p in w.problems().iter().take(200) {
            for &a in &p.wrong_archetypes {
                let s = SolutionArtifact::new("s", Archetype::Wrong(a), &p.problem_id);
                for t in tests_of(&p.problem_id, kind, 10) {
                    n += 1;
                    pass += w.execute(&s, &t).unwrap().is_pass() as usize;
                }
            }
        }
        let rate = pass as f64 / n as f64;
        let sigma = (want * (1.0 - want) / n as f64).sqrt();
        assert!((rate - want).abs() <= 3.0 * sigma, "{kind}: {rate} vs {want} (n = {n})");
    }
}

#[test]
fn correct_solutions_pass_every_valid_test() {
    let w = world(42);
    for p in w.problems().iter().take(50) {
        let s = SolutionArtifact::new("ref", Archetype::Correct, &p.problem_id);
        for kind in TestKind::ALL {
            for t in tests_of(&p.problem_id, kind, 5) {
                let o = w.execute(&s, &t).unwrap();
                match kind {
                    TestKind::InvalidFormat => assert_eq!(o, Outcome::Error),
                    TestKind::WrongSemantics => assert_eq!(o, Outcome::Fail),
                    _ => assert_eq!(o, Outcome::Pass),
                }
            }
        }
    }
}

#[test]
fn strong_tests_kill_whatever_weak_tests_kill() {
    let w = world(43);
    for p in w.problems().iter().take(100) {
        for &a in &p.wrong_archetypes {
            let s = SolutionArtifact::new("s", Archetype::Wrong(a), &p.problem_id);
            for j in 0..10 {
                let id = format!("{}/t{j}", p.problem_id);
                let weak = w.execute(&s, &TestArtifact::new(&id, TestKind::Weak, &p.problem_id)).unwrap();
                let strong = w.execute(&s, &TestArtifact::new(&id, TestKind::Strong, &p.problem_id)).unwrap();
                if !weak.is_pass() {
                    assert!(!strong.is_pass());
                }
            }
        }
    }
}

#[test]
fn generation_and_execution_are_reproducible() {
    let a = world(44);
    let b = world(44);
    assert_eq!(a.problems(), b.problems());
    assert_ne!(a.problems(), world(45).problems());
    let p = &a.problems()[3];
    let sols: Vec<SolutionArtifact> = p
        .wrong_archetypes
        .iter()
        .map(|&k| SolutionArtifact::new(format!("w{k}"), Archetype::Wrong(k), &p.problem_id))
        .chain(std::iter::once(SolutionArtifact::new("c", Archetype::Correct, &p.problem_id)))
        .collect();
    let tests = tests_of(&p.problem_id, TestKind::Weak, 8);
    assert_eq!(
        build_passing_matrix(&a, p, &sols, &tests).unwrap(),
        build_passing_matrix(&b, p, &sols, &tests).unwrap()
    );
    let c = SolutionArtifact::new("c", Archetype::Correct, &p.problem_id);
    assert_eq!(a.mutants_of(&c).unwrap(), b.mutants_of(&c).unwrap());
}

#[test]
fn matrix_does_not_depend_on_artifact_order() {
    let w = world(46);
    let p = &w.problems()[7];
    let mut sols: Vec<SolutionArtifact> = (0..6)
        .map(|i| {
            let a = if i % 3 == 0 { Archetype::Correct } else { Archetype::Wrong(p.wrong_archetypes[i % p.wrong_archetypes.len()]) };
            SolutionArtifact::new(format!("s{i}"), a, &p.problem_id)
        })
        .collect();
    let mut tests: Vec<TestArtifact> = TestKind::ALL
        .iter()
        .flat_map(|&k| tests_of(&p.problem_id, k, 2))
        .collect();
    let m1 = build_passing_matrix(&w, p, &sols, &tests).unwrap();
    sols.reverse();
    tests.reverse();
    let m2 = build_passing_matrix(&w, p, &sols, &tests).unwrap();
    assert_eq!(rank(&m1), rank(&m2));
    for (i, s) in m1.solution_ids().iter().enumerate() {
        let i2 = m2.solution_ids().iter().position(|x| x == s).unwrap();
        for (j, t) in m1.test_ids().iter().enumerate() {
            let j2 = m2.test_ids().iter().position(|x| x == t).unwrap();
            assert_eq!(m1.get(i, j), m2.get(i2, j2));
        }
    }
}

#[test]
fn mutant_counts_average_near_configured_mean() {
    let w = world(47);
    let counts: Vec<usize> = w
        .problems()
        .iter()
        .map(|p| w.mutants_of(&SolutionArtifact::new("ref", Archetype::Correct, &p.problem_id)).unwrap().len())
        .collect();
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let mu = w.config().mutant_mean;
    assert!((mean - mu).abs() <= 3.0 * (mu / counts.len() as f64).sqrt(), "{mean}");
    assert!(counts.iter().all(|&c| c >= 1));
}

#[test]
fn degenerate_problems_have_expected_shapes() {
    let w = SyntheticWorld::generate(
        48,
        WorldConfig {
            degenerate_fraction: 0.3,
            ..WorldConfig::default()
        },
    );
    let degenerate = w.problems().iter().filter(|p| p.shape != ProblemShape::Regular).count();
    let n = w.problems().len() as f64;
    assert!((degenerate as f64 / n - 0.3).abs() <= 3.0 * (0.21 / n).sqrt());
    for p in w.problems().iter().filter(|p| p.shape != ProblemShape::Regular) {
        assert_eq!(p.wrong_archetypes.len(), 1);
    }
}

#[test]
fn rejects_cross_problem_and_unknown_ids() {
    let w = world(49);
    let s = SolutionArtifact::new("s", Archetype::Correct, "p0000");
    let t = TestArtifact::new("t", TestKind::Weak, "p0001");
    assert!(matches!(w.execute(&s, &t), Err(ExecError::WorldMismatch { .. })));
    let ghost = SolutionArtifact::new("s", Archetype::Correct, "nope");
    assert!(matches!(
        w.execute(&ghost, &TestArtifact::new("t", TestKind::Weak, "nope")),
        Err(ExecError::UnknownProblem(_))
    ));
    assert!(matches!(
        w.mutants_of(&SolutionArtifact::new("s", Archetype::Wrong(0), "p0000")),
        Err(ExecError::NotCorrectSolution(_))
    ));
}

fn spawn(mode: &str, batch: usize) -> (coevo_testkit::ScriptedBackend, ExternalExecutor) {
    let b = scripted_backend(mode, batch);
    let e = ExternalExecutor::spawn(&b.command, 300).unwrap().with_grace(Duration::from_millis(100));
    (b, e)
}

#[test]
fn external_round_trip_in_order() {
    let (_b, e) = spawn("echo", 1);
    let got = e.execute_batch(&[("pass", "t"), ("fail", "t"), ("error", "t")], 300).unwrap();
    assert_eq!(got, vec![Ok(Outcome::Pass), Ok(Outcome::Fail), Ok(Outcome::Error)]);
    assert_eq!(e.execute(&"fail".to_string(), &"t".to_string()).unwrap(), Outcome::Fail);
}

#[test]
fn external_matches_out_of_order_answers_by_id() {
    let (_b, e) = spawn("reverse", 4);
    let got = e
        .execute_batch(&[("pass", "a"), ("fail", "b"), ("error", "c"), ("fail", "d")], 300)
        .unwrap();
    assert_eq!(got, vec![Ok(Outcome::Pass), Ok(Outcome::Fail), Ok(Outcome::Error), Ok(Outcome::Fail)]);
}

#[test]
fn external_timeout_then_late_answer_is_dropped() {
    let (_b, e) = spawn("reverse", 2);
    let got = e.execute_batch(&[("pass", "a"), ("hang", "b"), ("fail", "c")], 200).unwrap();
    assert_eq!(got[0], Ok(Outcome::Pass));
    assert_eq!(got[1], Err(ExecError::Timeout(200)));
    assert_eq!(got[2], Ok(Outcome::Fail));
    // this batch releases the stale answer for the hung request
    let got = e.execute_batch(&[("error", "d"), ("pass", "e")], 200).unwrap();
    assert_eq!(got, vec![Ok(Outcome::Error), Ok(Outcome::Pass)]);
    let got = e.execute_batch(&[("fail", "f"), ("fail", "g")], 200).unwrap();
    assert_eq!(got, vec![Ok(Outcome::Fail), Ok(Outcome::Fail)]);
    assert_eq!(e.execute(&"hang".to_string(), &"h".to_string()).unwrap(), Outcome::Error);
}

#[test]
fn external_protocol_violations() {
    let (_b, e) = spawn("garbage", 1);
    assert!(matches!(e.execute_batch(&[("pass", "t")], 300), Err(ExecError::ProtocolViolation(_))));
    let (_b, e) = spawn("unknown", 1);
    assert!(matches!(e.execute_batch(&[("pass", "t")], 300), Err(ExecError::ProtocolViolation(_))));
    let (_b, e) = spawn("exit", 1);
    assert!(matches!(e.execute_batch(&[("pass", "t")], 300), Err(ExecError::ProtocolViolation(_))));
    assert!(matches!(e.execute_batch(&[("pass", "t")], 300), Err(ExecError::ProtocolViolation(_))));
}

#[test]
fn spawn_failure_surfaces_on_first_request() {
    let e = ExternalExecutor::spawn("exit 0", 100).unwrap();
    assert!(e.execute_batch(&[("pass", "t")], 100).is_err());
}
