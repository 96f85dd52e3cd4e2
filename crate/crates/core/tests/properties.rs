//! Randomized and end-to-end properties checked against the reference
//! computations in `common`.

mod common;

use anticipation::belief::{transform, BeliefState};
use anticipation::bounds::{contraction_factor, kappa, robust_lambda, termination_guarantee, value_gap_constant};
use anticipation::builders::{build_rps, build_rps_mem, build_switch};
use anticipation::consistency::{brute_force_refute, check_edge, feasible_vertices, EdgeQuery, Verdict};
use anticipation::game::{GameArena, GameInstance, Observation, OpponentPolicy, SwitchModel};
use anticipation::ism::InformationStateMachine;
use anticipation::planner::{plan, value_gap_estimate};
use anticipation::rng::stream_rng;
use anticipation::sim::{max_actual_gap, replay, run_grid, simulate_stream, GridConfig, ScriptStep};
use anticipation::synthesis::{synthesize, verify_consistency, SynthesisOutcome};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use common::{draw, grid_max_post, l1, random_belief, random_stochastic, simplex_grid, tau};

fn machine(instance: &GameInstance, lambda: f64) -> InformationStateMachine {
    match synthesize(instance, lambda, 50_000, 300.0).unwrap() {
        SynthesisOutcome::Machine { ism, .. } => ism,
        other => panic!("no machine: {:?}", other.stats()),
    }
}

fn rps(stay: f64) -> GameInstance {
    build_rps().with_switch(build_switch(4, stay).unwrap())
}

fn random_query(rng: &mut ChaCha8Rng, n: usize) -> EdgeQuery {
    let switch = random_stochastic(rng, n, 0.0);
    let mut alphas: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random() })
        .collect();
    if alphas.iter().all(|a| *a == 0.0) {
        alphas[0] = 1.0;
    }
    let source = random_belief(rng, n, 0.0);
    let lambda = rng.random_range(0.05..0.5);
    let mut target = tau(&source, &alphas, &switch).unwrap_or_else(|| source.clone());
    let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
    let step = (rng.random::<f64>() * 0.8 * lambda).min(target[j]);
    target[i] += step;
    target[j] -= step;
    EdgeQuery {
        source_belief: BeliefState::new(source).unwrap(),
        target_belief: BeliefState::new(target).unwrap(),
        observation: Observation::new(0, 0),
        lambda,
        alphas,
        switch: SwitchModel::from_rows(switch).unwrap(),
    }
}

/// `Σ_j |e_j(b)| − λ Σ_i α_i b_i`, written through the post-update distance.
fn excess(q: &EdgeQuery, b: &[f64]) -> f64 {
    let z: f64 = b.iter().zip(&q.alphas).map(|(x, a)| x * a).sum();
    match tau(b, &q.alphas, &q.switch.rows()) {
        Some(next) => z * (l1(&next, q.target_belief.entries()) - q.lambda),
        None => 0.0,
    }
}

#[test]
fn two_policy_queries_match_fine_grid() {
    let mut rng = stream_rng(1, 0);
    let mut checked = 0;
    while checked < 300 {
        let q = random_query(&mut rng, 2);
        let rows = q.switch.rows();
        let (max_post, _) = grid_max_post(
            q.source_belief.entries(),
            q.target_belief.entries(),
            &q.alphas,
            &rows,
            q.lambda,
            1000,
        );
        if (max_post - q.lambda).abs() <= 1e-2 {
            continue;
        }
        checked += 1;
        let verdict = check_edge(&q).unwrap();
        assert_eq!(
            verdict.is_consistent(),
            max_post <= q.lambda,
            "{q:?} grid max {max_post}"
        );
    }
}

#[test]
fn verdict_matches_best_vertex() {
    let mut rng = stream_rng(2, 0);
    let mut refuted = 0;
    for k in 0..300 {
        let n = 2 + k % 3;
        let q = random_query(&mut rng, n);
        let vertices = feasible_vertices(q.source_belief.entries(), q.lambda);
        let best = vertices.iter().map(|v| excess(&q, v)).fold(f64::NEG_INFINITY, f64::max);
        if n == 3 {
            // no grid point may beat the best vertex (convexity)
            let mut grid_best = f64::NEG_INFINITY;
            simplex_grid(3, 200, |b| {
                if l1(b, q.source_belief.entries()) <= q.lambda {
                    grid_best = grid_best.max(excess(&q, b));
                }
            });
            assert!(grid_best <= best + 1e-9, "grid {grid_best} beats vertices {best}");
        }
        if best.abs() < 1e-7 {
            continue;
        }
        let verdict = check_edge(&q).unwrap();
        assert_eq!(verdict.is_consistent(), best <= 1e-9, "n={n} best vertex excess {best}");
        if let Verdict::Refuted {
            witness,
            pre_distance,
            post_distance,
        } = verdict
        {
            refuted += 1;
            assert!(pre_distance <= q.lambda + 1e-9 && post_distance > q.lambda);
            assert!(excess(&q, witness.entries()) > 0.0);
        }
    }
    assert!(refuted > 20, "too few refutations to be informative: {refuted}");
}

#[test]
fn sampling_never_refutes_a_consistent_edge() {
    let mut rng = stream_rng(3, 0);
    let mut consistent = 0;
    for k in 0..100 {
        let q = random_query(&mut rng, 2 + k % 3);
        if check_edge(&q).unwrap().is_consistent() {
            consistent += 1;
            for seed in 0..3 {
                assert!(brute_force_refute(&q, 2000, seed).is_none(), "{q:?}");
            }
        }
    }
    assert!(consistent > 20);
}

#[test]
fn synthesized_rps_machine_structure() {
    let game = build_rps();
    let lambda = 0.25;
    let ism = machine(&game, lambda);
    let u = BeliefState::uniform(4).unwrap();
    for a in 0..3 {
        let o = Observation::new(0, a);
        let next = ism.advance(ism.initial(), o).unwrap().expect("edge present");
        let exact = transform(&u, o, &game).unwrap();
        assert!(l1(ism.belief(next).entries(), exact.entries()) <= lambda + 1e-12);
    }
    let mut rng = stream_rng(4, 0);
    for _ in 0..50 {
        let seq: Vec<Observation> = (0..30).map(|_| Observation::new(0, rng.random_range(0..3))).collect();
        let mut m = ism.initial();
        for o in &seq {
            m = ism.advance(m, *o).unwrap().unwrap();
        }
        assert_eq!(ism.run(&seq), Ok(m));
    }
    let report = verify_consistency(&ism, &game, lambda, 2000, 30, 4).unwrap();
    assert!(report.is_clean(), "{report:?}");
    let dot = ism.export_dot();
    let nodes = dot.lines().filter(|l| l.contains("[shape=")).count();
    let edges = dot.lines().filter(|l| l.contains("->")).count();
    assert_eq!(nodes, ism.num_states());
    assert!(edges <= ism.num_states() * 3);
    assert_eq!(edges, ism.num_edges());
}

#[test]
fn rps_mem_kappa_from_policy_table() {
    // In state (r1, r2) the nine policies give r2 probabilities
    // 0.45, 0.45, 0.1, 0.8, 0.1, 0.1, 0.8, 0.1, 0.1.
    let alpha = [0.45, 0.45, 0.1, 0.8, 0.1, 0.1, 0.8, 0.1, 0.1];
    let amax = 0.8;
    let asum: f64 = alpha.iter().sum();
    let expected = amax / (asum + 9.0 * amax);
    let game = build_rps_mem();
    let o = Observation::new(0, 0);
    assert_eq!(game.alphas(o), alpha.to_vec());
    assert!((kappa(o, &game).unwrap() - expected).abs() < 1e-15);
    assert!((expected - 4.0 / 51.0).abs() < 1e-15);
}

/// Small random game: `states` states, two actions each, `n` policies.
fn random_game(rng: &mut ChaCha8Rng, states: usize, n: usize, switch_floor: f64) -> GameInstance {
    let names = |p: &str, k: usize| (0..k).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let mut arena = GameArena::new(names("s", states), names("a", 2), names("b", 2));
    for s in 0..states {
        for a1 in 0..2 {
            for a2 in 0..2 {
                arena.set_reward(s, a1, a2, rng.random_range(-1.0..1.0));
                let next: Vec<f64> = (0..states).map(|_| rng.random::<f64>() + 0.1).collect();
                let z: f64 = next.iter().sum();
                arena.set_transition(s, a1, a2, next.iter().enumerate().map(|(t, p)| (t, p / z)).collect());
            }
        }
    }
    let policies = (0..n)
        .map(|i| {
            let rows = (0..states)
                .map(|_| {
                    let p = rng.random_range(0.05..0.95);
                    vec![p, 1.0 - p]
                })
                .collect();
            OpponentPolicy::from_rows(format!("pi{i}"), rows)
        })
        .collect();
    let switch = SwitchModel::from_rows(random_stochastic(rng, n, switch_floor)).unwrap();
    GameInstance::new(arena, policies, switch)
}

#[test]
fn termination_condition_yields_a_machine() {
    let mut rng = stream_rng(5, 0);
    let mut tried = 0;
    while tried < 25 {
        let n = rng.random_range(2..=3);
        let (states, floor) = (rng.random_range(1..=2), rng.random_range(0.15..0.3));
        let game = random_game(&mut rng, states, n, floor);
        let guarantee = termination_guarantee(&game);
        for o in game.nonzero_observations() {
            let below = guarantee.t_star > kappa(o, &game).unwrap();
            assert_eq!(contraction_factor(o, &game).unwrap() < 1.0, below);
        }
        if !guarantee.guaranteed {
            continue;
        }
        tried += 1;
        let lambda = rng.random_range(0.05..0.3);
        let out = synthesize(&game, lambda, 20_000, 60.0).unwrap();
        let ism = out
            .machine()
            .unwrap_or_else(|| panic!("no machine at lambda {lambda}: {:?}", out.stats()));
        let report = verify_consistency(ism, &game, lambda, 300, 30, 5).unwrap();
        assert!(report.is_clean(), "{report:?}");
    }
}

#[test]
fn actual_belief_stays_within_robust_lambda() {
    let mut rng = stream_rng(6, 0);
    let mut tried = 0;
    let mut attempts = 0;
    while tried < 10 && attempts < 500 {
        attempts += 1;
        let n = rng.random_range(2..=3);
        let design = random_game(&mut rng, 1, n, 0.25);
        let t_a = SwitchModel::from_rows(random_stochastic(&mut rng, n, 0.25)).unwrap();
        let lambda = 0.1;
        let Some(bound) = robust_lambda(&t_a, &design.switch, &design, lambda).unwrap() else {
            continue;
        };
        let Some(ism) = synthesize(&design, lambda, 20_000, 60.0).unwrap().machine().cloned() else {
            continue;
        };
        tried += 1;
        let (_, policy) = plan(&design, &ism, 0.95).unwrap();
        for stream in 0..3 {
            let trace = simulate_stream(&design, &ism, &policy, &t_a, 3000, 6, stream).unwrap();
            assert!(max_actual_gap(&trace) <= bound + 1e-6);
        }
    }
    assert!(tried >= 5, "only {tried} instances had a finite bound");
}

#[test]
fn rps_mismatch_gap_bounded_even_when_bound_is_loose() {
    let game = rps(0.5);
    let ism = machine(&game, 0.1);
    let (_, policy) = plan(&game, &ism, 0.95).unwrap();
    let t_a = build_switch(4, 0.5).unwrap();
    // matched switch: the bound collapses to λ/(1 − L) = 0.4
    let bound = robust_lambda(&t_a, &game.switch, &game, 0.1).unwrap().unwrap();
    assert!((bound - 0.4).abs() < 1e-12);
    for stream in 0..5 {
        let trace = simulate_stream(&game, &ism, &policy, &t_a, 5000, 8, stream).unwrap();
        assert!(max_actual_gap(&trace) <= bound + 1e-6);
    }
}

#[test]
fn replayed_script_length_matches() {
    let game = rps(0.5);
    let ism = machine(&game, 0.1);
    let (_, policy) = plan(&game, &ism, 0.95).unwrap();
    for len in [0, 1, 7, 40] {
        let script: Vec<ScriptStep> = (0..len)
            .map(|k| ScriptStep {
                state: None,
                action: k % 3,
            })
            .collect();
        let trace = replay(&game, &ism, &policy, &script, 100).unwrap();
        assert_eq!(trace.len(), len);
    }
}

#[test]
fn scripts_from_one_policy_concentrate_the_belief() {
    let game = rps(0.5);
    let ism = machine(&game, 0.1);
    let (_, policy) = plan(&game, &ism, 0.95).unwrap();
    let mut rng = stream_rng(9, 0);
    for i in 0..4 {
        let row = game.policies[i].row(0).to_vec();
        let mut at_zero = 0.0;
        let mut at_ten = 0.0;
        let runs = 300;
        for _ in 0..runs {
            let script: Vec<ScriptStep> = (0..11)
                .map(|_| ScriptStep {
                    state: None,
                    action: draw(&row, rng.random()),
                })
                .collect();
            let trace = replay(&game, &ism, &policy, &script, 11).unwrap();
            at_zero += trace.steps[0].ism_belief[i];
            at_ten += trace.steps[10].ism_belief[i];
        }
        assert!(
            at_ten / runs as f64 > at_zero / runs as f64,
            "policy {i}: {at_zero} -> {at_ten}"
        );
    }
}

#[test]
fn repeated_paper_drives_third_policy_to_its_floor() {
    let game = build_rps();
    let ism = machine(&game, 0.25);
    let (_, policy) = plan(&game, &ism, 0.95).unwrap();
    let script: Vec<ScriptStep> = (0..60).map(|_| ScriptStep { state: None, action: 1 }).collect();
    let trace = replay(&game, &ism, &policy, &script, 60).unwrap();
    let mass: Vec<f64> = trace.steps.iter().map(|s| s.exact_belief[2]).collect();
    let floor = game.switch.min_entry();
    assert_eq!(mass[0], 0.25);
    assert!(mass[1..].iter().all(|m| *m < 0.25 && *m >= floor - 1e-12));
    assert!((mass[59] - mass[58]).abs() < 1e-9, "not settled: {:?}", &mass[50..]);
    // fixed point of b ↦ shift(condition(b, p2)) restricted to the third entry
    let mut b = vec![0.25; 4];
    let alphas = game.alphas(Observation::new(0, 1));
    for _ in 0..500 {
        b = tau(&b, &alphas, &game.switch.rows()).unwrap();
    }
    assert!((mass[59] - b[2]).abs() < 1e-9);
}

#[test]
fn reward_decays_as_the_opponent_mixes_faster() {
    let game = build_rps();
    let config = GridConfig {
        horizon: 100_000,
        gamma: 0.95,
        max_states: 20_000,
        max_seconds: 120.0,
    };
    let stays = [0.5, 0.6, 0.7];
    let actual = [0.3, 0.4, 0.5, 0.6, 0.7];
    let rows = run_grid(&game, &[0.1], &stays, &actual, &[0, 1, 2], &config).unwrap();
    let mut trends = 0;
    for design in stays {
        let cell = |a: f64, which: &str| {
            rows.iter()
                .find(|r| r.stay_design == design && r.stay_actual == a && r.seed == which)
                .and_then(|r| r.r_avg)
        };
        let points: Vec<(f64, f64, f64)> = actual
            .iter()
            .filter(|a| **a <= design + 1e-12)
            .filter_map(|&a| Some((a, cell(a, "mean")?, cell(a, "stderr")?)))
            .collect();
        if points.is_empty() {
            continue;
        }
        trends += 1;
        for w in points.windows(2) {
            let ((a0, r0, e0), (a1, r1, e1)) = (w[0], w[1]);
            assert!(
                r0 <= r1 + 3.0 * (e0 + e1),
                "design {design}: r({a0}) = {r0} > r({a1}) = {r1}"
            );
        }
    }
    assert!(trends >= 2);
}

#[test]
fn value_gap_vanishes_with_lambda() {
    let game = rps(0.5);
    let tiny = machine(&game, 1e-4);
    let report = value_gap_estimate(&game, &tiny, 0.95, 2000, 200, 12).unwrap();
    assert!(report.gap.abs() <= 3.0 * report.gap_stderr + 1e-12, "{report:?}");

    let mut points = Vec::new();
    for lambda in [0.05, 0.1, 0.25] {
        let ism = machine(&game, lambda);
        let r = value_gap_estimate(&game, &ism, 0.95, 2000, 200, 12).unwrap();
        points.push((lambda, r.gap.abs(), r.gap_stderr));
    }
    // the theoretical constant with ρ = 2 caps the slope
    let (base, rho) = value_gap_constant(&game, 0, 0.95);
    let k = base + 2.0 * rho;
    let (l_hi, g_hi, e_hi) = points[2];
    let slope = (g_hi + 3.0 * e_hi) / l_hi;
    for (lambda, gap, se) in points {
        assert!(gap <= k * lambda + 3.0 * se);
        assert!(
            gap <= slope * lambda + 3.0 * se + 1e-12,
            "lambda {lambda}: gap {gap} above envelope"
        );
    }
}
