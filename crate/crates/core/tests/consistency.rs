use anticipation::belief::BeliefState;
use anticipation::builders::{build_rps, build_switch};
use anticipation::consistency::*;
use anticipation::error::Error;
use anticipation::game::GameInstance;
use anticipation::game::Observation;
use anticipation::game::SwitchModel;
use anticipation::game::{GameArena, OpponentPolicy};

fn bs(v: &[f64]) -> BeliefState {
    BeliefState::new(v.to_vec()).unwrap()
}

fn example_query() -> EdgeQuery {
    EdgeQuery::new(
        &build_rps(),
        bs(&[0.25, 0.17, 0.32, 0.26]),
        Observation::new(0, 0),
        bs(&[0.31, 0.17, 0.26, 0.26]),
        0.25,
    )
}

#[test]
fn single_policy_is_always_consistent() {
    let arena = GameArena::new(vec!["s".into()], vec!["a".into()], vec!["x".into(), "y".into()]);
    let g = GameInstance::new(
        arena,
        vec![OpponentPolicy::from_rows("p", vec![vec![0.5, 0.5]])],
        SwitchModel::identity(1),
    );
    let q = EdgeQuery::new(&g, bs(&[1.0]), Observation::new(0, 0), bs(&[1.0]), 0.01);
    assert_eq!(check_edge(&q).unwrap(), Verdict::Consistent);
    assert!(brute_force_refute(&q, 100, 1).is_none());
}

#[test]
fn worked_example_is_refuted() {
    let q = example_query();
    match check_edge(&q).unwrap() {
        Verdict::Refuted {
            witness,
            pre_distance,
            post_distance,
        } => {
            assert!(pre_distance <= 0.25 + 1e-9);
            assert!(post_distance > 0.25);
            assert!(q.violates(&witness, 0.0));
        }
        v => panic!("expected refutation, got {v:?}"),
    }
    let hand = bs(&[0.125, 0.17, 0.445, 0.26]);
    let (pre, post) = q.distances(&hand).unwrap();
    assert!((pre - 0.25).abs() < 1e-12);
    assert!(post > 0.25);
    assert!(brute_force_refute(&q, 100_000, 3).is_some());
}

#[test]
fn fresh_edge_under_mixing_switch_is_consistent() {
    // stay 0.5 satisfies the contraction premise for RPS
    let g = build_rps().with_switch(build_switch(4, 0.5).unwrap());
    let u = BeliefState::uniform(4).unwrap();
    let o = Observation::new(0, 1);
    let next = anticipation::belief::transform(&u, o, &g).unwrap();
    let q = EdgeQuery::new(&g, u, o, next, 0.1);
    assert_eq!(check_edge(&q).unwrap(), Verdict::Consistent);
    for seed in 0..5 {
        assert!(brute_force_refute(&q, 2000, seed).is_none());
    }
}

#[test]
fn query_validation() {
    let mut q = example_query();
    q.lambda = 0.0;
    assert!(check_edge(&q).is_err());
    let mut q = example_query();
    q.target_belief = bs(&[0.5, 0.5]);
    assert!(matches!(check_edge(&q), Err(Error::DimensionMismatch { .. })));
    let mut q = example_query();
    q.alphas = vec![0.0; 4];
    assert!(check_edge(&q).is_err());
}

#[test]
fn vertices_of_simple_ball() {
    // n = 2, c = (0.5, 0.5), λ = 0.2: segment from (0.4, 0.6) to (0.6, 0.4)
    let mut v = feasible_vertices(&[0.5, 0.5], 0.2);
    v.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    assert_eq!(v.len(), 2);
    assert!((v[0][0] - 0.4).abs() < 1e-12 && (v[1][0] - 0.6).abs() < 1e-12);
    // ball clipped by the simplex boundary
    let v = feasible_vertices(&[0.05, 0.95], 0.4);
    assert!(v.iter().any(|b| b[0].abs() < 1e-12));
}

#[test]
fn checker_caches() {
    let g = build_rps();
    let c = EdgeChecker::new(&g, 0.25);
    let a = bs(&[0.25, 0.17, 0.32, 0.26]);
    let b = bs(&[0.31, 0.17, 0.26, 0.26]);
    let v1 = c.check(&a, Observation::new(0, 0), &b).unwrap();
    let v2 = c.check(&a, Observation::new(0, 0), &b).unwrap();
    assert_eq!(v1, v2);
    assert_eq!(c.checks(), 2);
    assert_eq!(c.cache_hits(), 1);
}
