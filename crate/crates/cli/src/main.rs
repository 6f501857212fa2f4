use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use drivesim_core::bench::{run_bench, to_csv};
use drivesim_core::config::RootConfig;
use drivesim_core::engine::{Engine, EpisodeLog};
use drivesim_core::friction::{friction_table, FrictionModel, TABLE_FILMS_MM};
use drivesim_core::metrics::episode_metrics;
use drivesim_core::policy::{Constant, GoalSeeker, LaneFollower, Policy};
use drivesim_core::sysid::{default_bounds, generate_maneuvers, perturbed_teacher_params, run_cem, Frame, Maneuver, Teacher};
use drivesim_core::vehicle::{VehicleParams, PARAM_NAMES};
use drivesim_core::world::build_world_batch;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "drivesim", version, about = "Batched multi-world driving simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// YAML configuration; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RootConfig> {
        let mut cfg = match &self.config {
            Some(p) => RootConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RootConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.sysid.cem.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    Lane,
    Goal,
    Zero,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode with a scripted policy and write the trajectory log.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "lane")]
        policy: PolicyKind,
        /// Apply the eval section (invincible mode, random goals) and emit metrics.
        #[arg(long)]
        eval: bool,
    },
    /// Evaluate a scripted policy or a replayed action stream; emits metrics JSON.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "lane")]
        policy: PolicyKind,
        /// JSON-lines file, one line of world-major actions per step.
        #[arg(long)]
        actions: Option<PathBuf>,
        #[arg(long)]
        invincible: bool,
        /// Resample goals at this lane travel range, metres.
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
        random_goals: Option<Vec<f64>>,
        /// Also write the trajectory log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Throughput sweep over world counts; writes CSV.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated world counts.
        #[arg(long, value_delimiter = ',')]
        worlds: Option<Vec<usize>>,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        no_reference: bool,
    },
    /// Staged CEM identification of vehicle parameters; writes the report JSON.
    Sysid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        /// JSON with `maneuvers` and 60 Hz `logs` to fit instead of a hidden teacher.
        #[arg(long)]
        teacher_logs: Option<PathBuf>,
    },
    /// Static friction per surface and film depth.
    FrictionTable {
        #[command(flatten)]
        common: Common,
    },
    /// Build the configured world batch and write the binary geometry.
    Forge {
        #[command(flatten)]
        common: Common,
    },
}

fn policy_fn(kind: PolicyKind) -> Box<dyn Policy> {
    match kind {
        PolicyKind::Lane => Box::new(LaneFollower::default()),
        PolicyKind::Goal => {
            let g = GoalSeeker::default();
            Box::new(move |e: &Engine| (0..e.num_slots()).map(|i| if e.state.alive[i] { g.from_obs(e.obs_row(i)) } else { [0.0; 3] }).collect::<Vec<_>>())
        }
        PolicyKind::Zero => Box::new(Constant([0.0; 3])),
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_actions(path: &Path, slots: usize) -> Result<Vec<Vec<[f64; 3]>>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<[f64; 3]> = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), k + 1))?;
        if row.len() != slots {
            bail!("{}:{}: {} actions for {slots} slots", path.display(), k + 1, row.len());
        }
        out.push(row);
    }
    Ok(out)
}

fn episode(engine: &mut Engine, kind: PolicyKind, replay: Option<Vec<Vec<[f64; 3]>>>) -> Result<EpisodeLog> {
    let log = match replay {
        Some(rows) => {
            let n = engine.num_slots();
            let total = rows.len();
            engine.run_episode(
                move |e: &Engine| {
                    let k = e.step_count() as usize;
                    if k == total {
                        log::warn!("action stream exhausted after {total} steps, holding zero actions");
                    }
                    rows.get(k).cloned().unwrap_or_else(|| vec![[0.0; 3]; n])
                },
                true,
            )?
        }
        None => {
            let mut p = policy_fn(kind);
            engine.run_episode(|e: &Engine| p.act(e), true)?
        }
    };
    Ok(log)
}

fn summary(log: &EpisodeLog) -> String {
    let m = episode_metrics(log);
    format!(
        "steps {} | agents {} | success {:.3} | collision {:.3} | mean max DRAC {:.2} ({} over threshold)",
        log.steps, m.num_agents, m.success_rate, m.collision_rate, m.mean_max_drac, m.agents_over_threshold
    )
}

#[derive(Deserialize)]
struct ExternalTeacher {
    maneuvers: Vec<Maneuver>,
    logs: Vec<Vec<Frame>>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { common, policy, eval } => {
            let mut cfg = common.load()?;
            if !eval {
                cfg.eval = Default::default();
            }
            let mut engine = cfg.build_engine()?;
            let log = episode(&mut engine, policy, None)?;
            eprintln!("{}", summary(&log));
            if eval {
                println!("{}", serde_json::to_string_pretty(&episode_metrics(&log))?);
            }
            if let Some(p) = &common.out {
                fs::write(p, log.to_jsonl()).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Eval {
            common,
            policy,
            actions,
            invincible,
            random_goals,
            log: log_path,
        } => {
            let mut cfg = common.load()?;
            cfg.eval.invincible |= invincible;
            if let Some(r) = random_goals {
                cfg.eval.random_goals.enabled = true;
                cfg.eval.random_goals.min_m = r[0];
                cfg.eval.random_goals.max_m = r[1];
            }
            cfg.validate()?;
            let mut engine = cfg.build_engine()?;
            let replay = actions.as_deref().map(|p| read_actions(p, engine.num_slots())).transpose()?;
            let log = episode(&mut engine, policy, replay)?;
            eprintln!("{}", summary(&log));
            let metrics = serde_json::to_string_pretty(&episode_metrics(&log))? + "\n";
            write_or_print(common.out.as_deref(), &metrics)?;
            if let Some(p) = log_path {
                fs::write(&p, log.to_jsonl()).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Bench {
            common,
            worlds,
            scale,
            no_reference,
        } => {
            let cfg = common.load()?;
            let mut b = cfg.bench.clone();
            if let Some(w) = worlds {
                b.worlds = w;
            }
            if let Some(s) = scale {
                b.scale = s;
            }
            b.reference &= !no_reference;
            let reports = run_bench(&b)?;
            for r in &reports {
                eprintln!("{:?} W={:>3} M={} CASPS {:>10.0}", r.path, r.worlds, r.agents, r.casps);
            }
            write_or_print(common.out.as_deref(), &to_csv(&reports)?)?;
        }
        Command::Sysid {
            common,
            trials,
            teacher_logs,
        } => {
            let cfg = common.load()?;
            let mut cem = cfg.sysid.cem.clone();
            if let Some(t) = trials {
                cem.total_trials = t;
            }
            let (dt, dec) = (cfg.env.physics_dt, cfg.env.decimation);
            let (teacher, hidden) = match teacher_logs {
                Some(p) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    let ext: ExternalTeacher = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
                    (Teacher::from_logs(ext.maneuvers, ext.logs, dt, dec)?, None)
                }
                None => {
                    let hidden = perturbed_teacher_params(cfg.sysid.teacher_perturbation, cem.seed);
                    let suite = generate_maneuvers(cfg.sysid.maneuver_scale, cfg.sysid.max_per_tier);
                    (Teacher::from_params(&hidden, suite, dt, dec)?, Some(hidden))
                }
            };
            let report = run_cem(&teacher, &cem, &default_bounds(), &cfg.vehicle_params()?)?;
            for s in &report.stages {
                eprintln!("{:<20} trials {:>3}  maneuvers {:>3}  loss {:.5} -> {:.5}", format!("{:?}", s.stage), s.trials, s.maneuvers, s.start_loss, s.best_loss);
            }
            if let Some(h) = &hidden {
                let truth = h.to_vector();
                for (i, name) in PARAM_NAMES.iter().enumerate() {
                    eprintln!("{name:<16} fitted {:>10.4}  hidden {:>10.4}", report.best[i], truth[i]);
                }
            }
            let mut json = serde_json::to_value(&report)?;
            json["best_params"] = serde_json::to_value(VehicleParams::default().with_vector(&report.best))?;
            write_or_print(common.out.as_deref(), &(serde_json::to_string_pretty(&json)? + "\n"))?;
        }
        Command::FrictionTable { common } => {
            let table = friction_table(&FrictionModel::default())?;
            let mut text = String::from("surface");
            for h in TABLE_FILMS_MM {
                text += &format!(",h={h:.1}mm");
            }
            text.push('\n');
            for (s, row) in table {
                text += s.name();
                for mu in row {
                    text += &format!(",{mu:.3}");
                }
                text.push('\n');
            }
            write_or_print(common.out.as_deref(), &text)?;
        }
        Command::Forge { common } => {
            let cfg = common.load()?;
            let Some(out) = &common.out else { bail!("forge needs --out") };
            let pool = cfg.scene_pool()?;
            let batch = build_world_batch(&pool, cfg.env.num_envs, cfg.scenes.fill_mode, cfg.seed, &cfg.scenes.build)?;
            batch.save_binary(out)?;
            eprintln!("{} worlds, {} segment rows each, {} scenes -> {}", batch.num_worlds, batch.p_max, pool.len(), out.display());
        }
    }
    Ok(())
}
