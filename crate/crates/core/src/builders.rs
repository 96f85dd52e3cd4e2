//! Benchmark games: rock-paper-scissors, rock-paper-scissors with one step of
//! memory, and the circular Anticipate-and-Avoid corridor.

use crate::error::{Error, Result};
use crate::game::{GameArena, GameInstance, OpponentPolicy, SwitchModel};

/// Player-1 reward for rock/paper/scissors, rows `a1`, columns `a2`.
const RPS_REWARD: [[f64; 3]; 3] = [[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]];

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Switch family: `stay` on the diagonal, the rest spread uniformly.
pub fn build_switch(n: usize, stay: f64) -> Result<SwitchModel> {
    if n < 2 {
        return Err(Error::Domain(format!("switch model needs n >= 2, got {n}")));
    }
    if !(stay > 0.0 && stay < 1.0) {
        return Err(Error::Domain(format!("stay probability must be in (0, 1), got {stay}")));
    }
    let off = (1.0 - stay) / (n - 1) as f64;
    let rows = (0..n)
        .map(|i| (0..n).map(|j| if i == j { stay } else { off }).collect())
        .collect();
    SwitchModel::from_rows(rows)
}

/// Default RPS switch chain: policies 1 and 2 stay with 0.55 and move with 0.15, policies 3 and 4
/// stay with 0.64 and move with 0.12.
pub fn rps_default_switch() -> SwitchModel {
    let row = |i: usize, stay: f64, off: f64| (0..4).map(|j| if i == j { stay } else { off }).collect();
    SwitchModel::from_rows(vec![
        row(0, 0.55, 0.15),
        row(1, 0.55, 0.15),
        row(2, 0.64, 0.12),
        row(3, 0.64, 0.12),
    ])
    .expect("square")
}

/// Single-state rock-paper-scissors against four opponent policies, with
/// [`rps_default_switch`] as the switch model.
pub fn build_rps() -> GameInstance {
    let mut arena = GameArena::new(names(&["t"]), names(&["r1", "p1", "s1"]), names(&["r2", "p2", "s2"]));
    for a1 in 0..3 {
        for a2 in 0..3 {
            arena.set_reward(0, a1, a2, RPS_REWARD[a1][a2]);
        }
    }
    let third = 1.0 / 3.0;
    let policies = vec![
        OpponentPolicy::from_rows("pi1", vec![vec![0.5, 0.5, 0.0]]),
        OpponentPolicy::from_rows("pi2", vec![vec![0.0, 0.5, 0.5]]),
        OpponentPolicy::from_rows("pi3", vec![vec![0.5, 0.0, 0.5]]),
        OpponentPolicy::from_rows("pi4", vec![vec![third, third, third]]),
    ];
    GameInstance::new(arena, policies, rps_default_switch())
}

/// Distribution that puts 0.8 on `hi` and 0.1 elsewhere.
fn mostly(hi: usize) -> Vec<f64> {
    (0..3).map(|a| if a == hi { 0.8 } else { 0.1 }).collect()
}

/// Distribution that puts 0.1 on `lo` and 0.45 elsewhere.
fn mostly_not(lo: usize) -> Vec<f64> {
    (0..3).map(|a| if a == lo { 0.1 } else { 0.45 }).collect()
}

/// Action that beats `a` (paper beats rock, scissors beats paper, rock beats scissors).
fn beats(a: usize) -> usize {
    (a + 1) % 3
}

/// Rock-paper-scissors where the state remembers the previous joint move.
///
/// State `3 * a1 + a2` is "last round player 1 played `a1` and player 2
/// played `a2`". The nine opponent policies mix static biases with reactions
/// to either player's last move. The switch model defaults to stay 0.4;
/// replace it with [`GameInstance::with_switch`].
pub fn build_rps_mem() -> GameInstance {
    let p1 = ["r1", "p1", "s1"];
    let p2 = ["r2", "p2", "s2"];
    let states: Vec<String> = (0..9).map(|s| format!("{}{}", p1[s / 3], p2[s % 3])).collect();
    let mut arena = GameArena::new(states, names(&p1), names(&p2));
    for s in 0..9 {
        for a1 in 0..3 {
            for a2 in 0..3 {
                arena.set_reward(s, a1, a2, RPS_REWARD[a1][a2]);
                arena.set_transition(s, a1, a2, vec![(3 * a1 + a2, 1.0)]);
            }
        }
    }
    let per_state =
        |f: &dyn Fn(usize, usize) -> Vec<f64>| -> Vec<Vec<f64>> { (0..9).map(|s| f(s / 3, s % 3)).collect() };
    let policies = vec![
        OpponentPolicy::from_rows("pi1", per_state(&|_, _| vec![0.45, 0.45, 0.1])),
        OpponentPolicy::from_rows("pi2", per_state(&|_, _| vec![0.45, 0.1, 0.45])),
        OpponentPolicy::from_rows("pi3", per_state(&|_, _| vec![0.1, 0.45, 0.45])),
        // repeat player 1's last move
        OpponentPolicy::from_rows("pi4", per_state(&|a, _| mostly(a))),
        // play what would have beaten player 1's last move
        OpponentPolicy::from_rows("pi5", per_state(&|a, _| mostly(beats(a)))),
        // avoid player 1's last move
        OpponentPolicy::from_rows("pi6", per_state(&|a, _| mostly_not(a))),
        // repeat own last move
        OpponentPolicy::from_rows("pi7", per_state(&|_, b| mostly(b))),
        // play what would have beaten own last move
        OpponentPolicy::from_rows("pi8", per_state(&|_, b| mostly(beats(b)))),
        // avoid own last move
        OpponentPolicy::from_rows("pi9", per_state(&|_, b| mostly_not(b))),
    ];
    let switch = build_switch(9, 0.4).expect("valid switch");
    GameInstance::new(arena, policies, switch)
}

/// Circular distance between cells `i` and `j` on a ring of `n` cells.
pub fn ring_distance(i: usize, j: usize, n: usize) -> usize {
    let d = i.abs_diff(j);
    d.min(n - d)
}

/// Reward tier for player 1 at cell `i` with player 2 at cell `j`.
fn avoid_reward(i: usize, j: usize, n: usize) -> f64 {
    if i == j {
        return -10.0;
    }
    let rho = ring_distance(i, j, n);
    // integer forms of rho <= N/10 and rho <= 3N/10
    if 10 * rho <= n {
        -5.0
    } else if 10 * rho <= 3 * n {
        0.0
    } else {
        1.0
    }
}

/// Single-player move kernel on the ring (cells `1..=n`): stay with 0.2,
/// step in the chosen direction with 0.8. Action 0 is `L`, action 1 is `R`.
fn ring_move(cell: usize, action: usize, n: usize) -> [(usize, f64); 2] {
    let next = if action == 0 {
        if cell == 1 {
            n
        } else {
            cell - 1
        }
    } else if cell == n {
        1
    } else {
        cell + 1
    };
    [(cell, 0.2), (next, 0.8)]
}

/// Move distribution `[P(L), P(R)]` of a player at `j` heading for `target`
/// along the shorter arc. Ties between the arcs go left.
pub fn target_choice(j: usize, target: usize, n: usize) -> Vec<f64> {
    let toward_left = vec![0.8, 0.2];
    let toward_right = vec![0.2, 0.8];
    if j > target {
        let left = j - target;
        let right = target + n - j;
        if right >= left {
            toward_left
        } else {
            toward_right
        }
    } else if j < target {
        let left = j + n - target;
        let right = target - j;
        if left <= right {
            toward_left
        } else {
            toward_right
        }
    } else {
        vec![0.5, 0.5]
    }
}

/// Anticipate-and-Avoid on a ring of `n` cells. State `(i, j)` holds player
/// 1 at cell `i` and player 2 at cell `j` (both `1..=n`), stored at index
/// `(i - 1) * n + (j - 1)`. Player 2 heads for one of four meeting cells.
/// The switch model defaults to stay 0.45.
pub fn build_anticipate_avoid(n: usize) -> Result<GameInstance> {
    if n < 10 {
        return Err(Error::Domain(format!("anticipate-and-avoid needs N >= 10, got {n}")));
    }
    let index = |i: usize, j: usize| (i - 1) * n + (j - 1);
    let mut states = Vec::with_capacity(n * n);
    for i in 1..=n {
        for j in 1..=n {
            states.push(format!("{i}_{j}"));
        }
    }
    let mut arena = GameArena::new(states, names(&["L", "R"]), names(&["L", "R"]));
    for i in 1..=n {
        for j in 1..=n {
            let s = index(i, j);
            for a1 in 0..2 {
                for a2 in 0..2 {
                    arena.set_reward(s, a1, a2, avoid_reward(i, j, n));
                    let mut next = Vec::with_capacity(4);
                    for (ni, pi) in ring_move(i, a1, n) {
                        for (nj, pj) in ring_move(j, a2, n) {
                            next.push((index(ni, nj), pi * pj));
                        }
                    }
                    arena.set_transition(s, a1, a2, next);
                }
            }
        }
    }
    let targets = [1, n.div_ceil(4), (2 * n).div_ceil(4), (3 * n).div_ceil(4)];
    let policies = targets
        .iter()
        .map(|&t| {
            let rows = (1..=n)
                .flat_map(|_| (1..=n).map(move |j| target_choice(j, t, n)))
                .collect();
            OpponentPolicy::from_rows(format!("target_{t}"), rows)
        })
        .collect();
    let switch = build_switch(4, 0.45)?;
    Ok(GameInstance::new(arena, policies, switch))
}
