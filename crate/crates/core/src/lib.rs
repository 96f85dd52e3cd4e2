//! Planning against oblivious opponents in concurrent stochastic games.
//!
//! Player 2 follows one of finitely many stationary policies and switches
//! between them by a Markov chain. Player 1 tracks a belief over those
//! policies; [`synthesis::synthesize`] compresses the belief dynamics into a
//! finite [`ism::InformationStateMachine`] whose annotations stay within a
//! chosen L1 tolerance of the exact belief, [`planner::compose`] turns the
//! machine and the game into a finite MDP, and [`planner::policy_iteration`]
//! solves it.
//!
//! ```
//! use anticipation::{builders, synthesis, planner};
//!
//! let game = builders::build_rps();
//! let out = synthesis::synthesize(&game, 0.25, 1000, 60.0).unwrap();
//! let ism = out.machine().expect("synthesis succeeds here");
//! let (mdp, policy) = planner::plan(&game, ism, 0.95).unwrap();
//! assert_eq!(policy.len(), mdp.num_states());
//! ```

pub mod belief;
pub mod bounds;
pub mod builders;
pub mod consistency;
pub mod error;
pub mod format;
pub mod game;
pub mod ism;
pub mod lp;
pub mod par;
pub mod planner;
pub mod rng;
pub mod sim;
pub mod synthesis;

pub use belief::{transform, tv_distance, BeliefState};
pub use consistency::{check_edge, EdgeQuery, Verdict};
pub use error::{Error, Result};
pub use game::{GameArena, GameInstance, Observation, OpponentPolicy, SwitchModel};
pub use ism::InformationStateMachine;
pub use planner::PlannerPolicy;
pub use synthesis::{synthesize, SynthesisOutcome};
