use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anticipation::bounds::{bound_report, check_discrepancy_bounds};
use anticipation::builders::{build_anticipate_avoid, build_rps, build_rps_mem, build_switch};
use anticipation::consistency::{check_edge, EdgeQuery, Verdict};
use anticipation::format::{load_game, load_switch, save_game};
use anticipation::planner::{bellman_residual, compose, policy_iteration, PlannerPolicy, DEFAULT_GAMMA, DEFAULT_TOL};
use anticipation::sim::{grid_csv, metrics, parse_script, replay, run_grid, simulate, GridConfig};
use anticipation::synthesis::{synthesize_with, verify_consistency, SynthesisConfig, SynthesisOutcome};
use anticipation::{Error, GameInstance, InformationStateMachine, SwitchModel};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Finite-memory planning against oblivious opponents.
#[derive(Parser, Debug)]
#[command(name = "anticipate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a game file and list every violation.
    Validate { game: PathBuf },
    /// Print termination and contraction constants as a table, then CSV.
    Bounds {
        game: PathBuf,
        #[command(flatten)]
        switch: SwitchArgs,
    },
    /// Build a consistent information state machine.
    Synth {
        game: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[command(flatten)]
        switch: SwitchArgs,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Machine output; a Graphviz file is written next to it with a .dot extension.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Decide a single edge query read from a JSON file.
    CheckEdge { query: PathBuf },
    /// Re-check every edge and sample sequences against the exact belief.
    Verify {
        game: PathBuf,
        ism: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[command(flatten)]
        switch: SwitchArgs,
        #[arg(long, default_value_t = 10_000)]
        sequences: usize,
        #[arg(long, default_value_t = 50)]
        max_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also sample this many histories for the one-step discrepancy bounds.
        #[arg(long, default_value_t = 0)]
        histories: usize,
    },
    /// Solve the composed MDP and write the policy.
    Plan {
        game: PathBuf,
        ism: PathBuf,
        #[command(flatten)]
        switch: SwitchArgs,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Play the policy against a simulated or scripted opponent.
    Simulate {
        game: PathBuf,
        ism: PathBuf,
        policy: PathBuf,
        #[command(flatten)]
        switch: SwitchArgs,
        /// Opponent switch stay probability; defaults to the design matrix.
        #[arg(long)]
        stay_actual: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replay opponent actions from a script (one `state action` per line).
        #[arg(long, conflicts_with = "stay_actual")]
        script: Option<PathBuf>,
    },
    /// Run a built-in benchmark end to end and print one table row.
    Bench {
        name: BenchName,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        /// Switch stay probability; defaults depend on the benchmark.
        #[arg(long, conflicts_with = "paper_eps")]
        stay: Option<f64>,
        /// Switch epsilon; mapped to stay = 1 - eps.
        #[arg(long)]
        paper_eps: Option<f64>,
        /// Ring size for ant-avoid.
        #[arg(long, default_value_t = 25)]
        size: usize,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Synthesize, plan and simulate over a parameter grid; writes CSV.
    Grid {
        game: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        stays: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        actual_stays: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 10_000)]
        horizon: usize,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[command(flatten)]
        budget: BudgetArgs,
        /// CSV output; standard output when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write one of the built-in games as a game file.
    Builtin {
        name: BenchName,
        #[arg(long, default_value_t = 25)]
        size: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct SwitchArgs {
    /// Replace the game's switch matrix with the stay/uniform family.
    #[arg(long, conflicts_with_all = ["switch", "paper_eps"])]
    stay: Option<f64>,
    /// Replace the game's switch matrix with one read from a JSON file.
    #[arg(long, conflicts_with = "paper_eps")]
    switch: Option<PathBuf>,
    /// Switch epsilon; mapped to stay = 1 - eps.
    #[arg(long)]
    paper_eps: Option<f64>,
}

#[derive(Args, Debug, Clone, Copy)]
struct BudgetArgs {
    #[arg(long, default_value_t = anticipation::synthesis::DEFAULT_MAX_STATES)]
    max_states: usize,
    #[arg(long, default_value_t = anticipation::synthesis::DEFAULT_MAX_SECONDS)]
    max_seconds: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum BenchName {
    Rps,
    RpsMem,
    AntAvoid,
}

/// Process outcome: exit code plus a message for standard error.
struct Exit {
    code: u8,
    message: String,
}

impl Exit {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Exit {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Exit {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse { .. } | Error::Io(_) => 5,
            Error::InvalidGame(_)
            | Error::Domain(_)
            | Error::DimensionMismatch { .. }
            | Error::Mismatch(_)
            | Error::Script { .. }
            | Error::InvalidState(_)
            | Error::UnknownObservation { .. } => 2,
            _ => 1,
        };
        Exit::new(code, e.to_string())
    }
}

type CmdResult = Result<(), Exit>;

fn main() -> ExitCode {
    // die quietly on a closed pipe (`anticipate bounds g.json | head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.message.is_empty() {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(e.code)
        }
    }
}

fn read(path: &Path) -> Result<String, Exit> {
    fs::read_to_string(path).map_err(|e| Exit::new(5, format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Exit::new(5, format!("{}: {e}", path.display())))
}

fn with_path(path: &Path) -> impl Fn(Error) -> Exit + '_ {
    move |e| {
        let mut exit = Exit::from(e);
        exit.message = format!("{}: {}", path.display(), exit.message);
        exit
    }
}

fn game_from(path: &Path) -> Result<GameInstance, Exit> {
    load_game(&read(path)?).map_err(with_path(path))
}

fn stay_from_eps(eps: f64) -> f64 {
    let stay = 1.0 - eps;
    eprintln!("eps {eps} -> stay {stay}");
    stay
}

impl SwitchArgs {
    fn apply(&self, game: GameInstance) -> Result<GameInstance, Exit> {
        let n = game.num_policies();
        let switch = if let Some(path) = &self.switch {
            load_switch(&read(path)?).map_err(with_path(path))?
        } else if let Some(stay) = self.stay.or(self.paper_eps.map(stay_from_eps)) {
            build_switch(n, stay)?
        } else {
            return Ok(game);
        };
        if switch.dim() != n {
            return Err(Exit::new(
                2,
                format!("switch matrix is {}x{0} but the game has {n} policies", switch.dim()),
            ));
        }
        Ok(game.with_switch(switch))
    }
}

fn ism_from(path: &Path, game: &GameInstance) -> Result<InformationStateMachine, Exit> {
    let ism = InformationStateMachine::deserialize(&read(path)?).map_err(with_path(path))?;
    if ism.belief(0).len() != game.num_policies() {
        return Err(Exit::new(
            2,
            format!(
                "machine beliefs have {} entries, game has {} policies",
                ism.belief(0).len(),
                game.num_policies()
            ),
        ));
    }
    Ok(ism)
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Validate { game } => validate(&game),
        Command::Bounds { game, switch } => {
            let game = switch.apply(game_from(&game)?)?;
            let report = bound_report(&game);
            print!("{report}");
            println!();
            print!("{}", report.observations_csv(&game));
            println!();
            print!("{}", report.states_csv(&game));
            Ok(())
        }
        Command::Synth {
            game,
            lambda,
            switch,
            budget,
            output,
        } => {
            let game = switch.apply(game_from(&game)?)?;
            synth(&game, lambda, budget, &output)
        }
        Command::CheckEdge { query } => {
            let q = EdgeQuery::from_json(&read(&query)?).map_err(with_path(&query))?;
            match check_edge(&q)? {
                Verdict::Consistent => println!("consistent"),
                Verdict::Refuted {
                    witness,
                    pre_distance,
                    post_distance,
                } => {
                    println!("refuted");
                    println!("witness {}", fmt_vec(witness.entries()));
                    println!("pre_distance {pre_distance:.12}");
                    println!("post_distance {post_distance:.12}");
                }
            }
            Ok(())
        }
        Command::Verify {
            game,
            ism,
            lambda,
            switch,
            sequences,
            max_len,
            seed,
            histories,
        } => {
            let game = switch.apply(game_from(&game)?)?;
            let ism = ism_from(&ism, &game)?;
            let report = verify_consistency(&ism, &game, lambda, sequences, max_len, seed)?;
            println!("edges_checked {}", report.edges_checked);
            println!("inconsistent_edges {}", report.inconsistent_edges.len());
            for (src, o, dst) in &report.inconsistent_edges {
                println!(
                    "  {src} --{}/{}--> {dst}",
                    game.arena.states[o.state], game.arena.p2_actions[o.action]
                );
            }
            println!("sequences {}", report.sequences);
            println!("max_gap {:.9}", report.max_observed_gap);
            println!("violations {}", report.violations);
            println!("undefined_runs {}", report.undefined_runs);
            let mut clean = report.is_clean();
            if histories > 0 {
                let d = check_discrepancy_bounds(&game, &ism, lambda, histories, max_len, seed)?;
                println!("reward_ratio {:.9}", d.max_reward_ratio);
                println!("transition_ratio {:.9}", d.max_transition_ratio);
                clean &= d.within_bounds();
            }
            if clean {
                Ok(())
            } else {
                Err(Exit::new(2, "machine failed verification"))
            }
        }
        Command::Plan {
            game,
            ism,
            switch,
            gamma,
            output,
        } => {
            let game = switch.apply(game_from(&game)?)?;
            let ism = ism_from(&ism, &game)?;
            check_gamma(gamma)?;
            let start = Instant::now();
            let composed = compose(&game, &ism)?;
            let plan = policy_iteration(&composed.mdp, gamma, DEFAULT_TOL)?;
            let residual = bellman_residual(&composed.mdp, &plan.values, gamma);
            let policy = PlannerPolicy::from_plan(&composed, &plan);
            write(&output, &policy.serialize(gamma))?;
            println!(
                "mdp_states {} improvements {} residual {residual:.3e} seconds {:.3}",
                composed.num_states(),
                plan.improvements,
                start.elapsed().as_secs_f64()
            );
            Ok(())
        }
        Command::Simulate {
            game,
            ism,
            policy,
            switch,
            stay_actual,
            horizon,
            seed,
            script,
        } => {
            let game = switch.apply(game_from(&game)?)?;
            let ism = ism_from(&ism, &game)?;
            let (policy, _gamma) = PlannerPolicy::deserialize(&read(&policy)?).map_err(with_path(&policy))?;
            policy.check_against(&game, &ism)?;
            let trace = if let Some(path) = script {
                let steps = parse_script(&read(&path)?, &game).map_err(with_path(&path))?;
                replay(&game, &ism, &policy, &steps, horizon)?
            } else {
                let actual: SwitchModel = match stay_actual {
                    Some(stay) => build_switch(game.num_policies(), stay)?,
                    None => game.switch.clone(),
                };
                simulate(&game, &ism, &policy, &actual, horizon, seed)?
            };
            let m = metrics(&trace, &game)?;
            println!("steps {}", trace.len());
            println!("r_avg {:.6}", m.r_avg);
            println!("ap_avg {:.6}", m.ap_avg);
            if let Some(p) = m.policy_pred {
                println!("policy_pred {p:.6}");
            }
            println!("undefined_transitions {}", trace.undefined_transitions.len());
            println!("off_policy_steps {}", trace.off_policy_steps.len());
            Ok(())
        }
        Command::Bench {
            name,
            lambda,
            stay,
            paper_eps,
            size,
            gamma,
            budget,
        } => {
            let (game, default_stay) = builtin(name, size)?;
            let stay = stay.or(paper_eps.map(stay_from_eps)).unwrap_or(default_stay);
            let game = game.with_switch(build_switch(game.num_policies(), stay)?);
            bench(name, &game, lambda, stay, gamma, budget)
        }
        Command::Grid {
            game,
            lambdas,
            stays,
            actual_stays,
            seeds,
            horizon,
            gamma,
            budget,
            output,
        } => {
            let game = game_from(&game)?;
            check_gamma(gamma)?;
            let config = GridConfig {
                horizon,
                gamma,
                max_states: budget.max_states,
                max_seconds: budget.max_seconds,
            };
            let rows = run_grid(&game, &lambdas, &stays, &actual_stays, &seeds, &config)?;
            let csv = grid_csv(&rows)?;
            match output {
                Some(path) => write(&path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Builtin { name, size, output } => {
            let (game, _) = builtin(name, size)?;
            let text = save_game(&game);
            match output {
                Some(path) => write(&path, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn check_gamma(gamma: f64) -> CmdResult {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Exit::new(2, format!("gamma must lie in (0, 1), got {gamma}")))
    }
}

/// Built-in game and the stay probability its benchmark uses by default.
fn builtin(name: BenchName, size: usize) -> Result<(GameInstance, f64), Exit> {
    Ok(match name {
        BenchName::Rps => (build_rps(), 0.5),
        BenchName::RpsMem => (build_rps_mem(), 0.4),
        BenchName::AntAvoid => (build_anticipate_avoid(size)?, 0.45),
    })
}

fn validate(path: &Path) -> CmdResult {
    match load_game(&read(path)?) {
        Ok(game) => {
            let report = game.validate();
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            let (s, a1, a2, n) = game.size();
            println!("ok: {s} states, {a1} player-1 actions, {a2} player-2 actions, {n} policies");
            Ok(())
        }
        Err(Error::InvalidGame(list)) => {
            for v in list.split("; ") {
                eprintln!("violation: {v}");
            }
            Err(Exit::new(2, format!("{} is not a valid game", path.display())))
        }
        Err(e) => Err(with_path(path)(e)),
    }
}

fn synth(game: &GameInstance, lambda: f64, budget: BudgetArgs, output: &Path) -> CmdResult {
    let config = SynthesisConfig {
        lambda,
        max_states: budget.max_states,
        max_seconds: budget.max_seconds,
    };
    let outcome = synthesize_with(game, &config)?;
    let stats = outcome.stats().clone();
    match outcome {
        SynthesisOutcome::Machine { ism, .. } => {
            write(output, &ism.serialize())?;
            write(&output.with_extension("dot"), &ism.export_dot_named(game))?;
            println!(
                "states {} edges {} checks {} seconds {:.3}",
                stats.states,
                stats.edges,
                stats.consistency_checks,
                stats.elapsed.as_secs_f64()
            );
            Ok(())
        }
        SynthesisOutcome::Failure {
            source_state,
            source_belief,
            observation,
            attempted_target_belief,
            witness,
            ..
        } => {
            eprintln!("synthesis failed on the fresh edge out of state {source_state}");
            eprintln!("  source belief  {}", fmt_vec(source_belief.entries()));
            eprintln!(
                "  observation    {}/{}",
                game.arena.states[observation.state], game.arena.p2_actions[observation.action]
            );
            eprintln!("  target belief  {}", fmt_vec(attempted_target_belief.entries()));
            eprintln!("  witness        {}", fmt_vec(witness.entries()));
            Err(Exit::new(
                3,
                format!("no {lambda}-consistent machine ({} states built)", stats.states),
            ))
        }
        SynthesisOutcome::BudgetExceeded { .. } => Err(Exit::new(
            4,
            format!(
                "budget exceeded after {} states and {:.1} s",
                stats.states,
                stats.elapsed.as_secs_f64()
            ),
        )),
    }
}

fn bench(name: BenchName, game: &GameInstance, lambda: f64, stay: f64, gamma: f64, budget: BudgetArgs) -> CmdResult {
    check_gamma(gamma)?;
    let label = name
        .to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default();
    println!(
        "{:<10} {:>7} {:>6} {:>8} {:>10} {:>8} {:>10}",
        "game", "lambda", "stay", "|M|", "synth_s", "|MDP|", "pi_s"
    );
    let config = SynthesisConfig {
        lambda,
        max_states: budget.max_states,
        max_seconds: budget.max_seconds,
    };
    let outcome = synthesize_with(game, &config)?;
    let synth_s = outcome.stats().elapsed.as_secs_f64();
    let ism = match outcome {
        SynthesisOutcome::Machine { ism, .. } => ism,
        SynthesisOutcome::Failure { .. } => {
            println!(
                "{label:<10} {lambda:>7} {stay:>6} {:>8} {synth_s:>10.3} {:>8} {:>10}",
                "Fail", "-", "-"
            );
            return Err(Exit::new(3, ""));
        }
        SynthesisOutcome::BudgetExceeded { stats } => {
            println!(
                "{label:<10} {lambda:>7} {stay:>6} {:>8} {synth_s:>10.3} {:>8} {:>10}",
                format!(">{}", stats.states),
                "-",
                "-"
            );
            return Err(Exit::new(4, ""));
        }
    };
    let start = Instant::now();
    let composed = compose(game, &ism)?;
    policy_iteration(&composed.mdp, gamma, DEFAULT_TOL)?;
    let pi_s = start.elapsed().as_secs_f64();
    println!(
        "{label:<10} {lambda:>7} {stay:>6} {:>8} {synth_s:>10.3} {:>8} {pi_s:>10.3}",
        ism.num_states(),
        composed.num_states()
    );
    Ok(())
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}
