//! `vgplan` command-line interface.
//!
//! One JSON config file (`--config`) drives every subcommand; individual
//! flags override their config keys. Training and evaluation commands
//! require an explicit `--seed`.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vgplan::checkpoint::Checkpoint;
use vgplan::config::ExperimentConfig;
use vgplan::dagger::{
    read_critic_jsonl, read_trigger_jsonl, write_critic_jsonl, write_trigger_jsonl,
};
use vgplan::env::{generate_suite, load_suite, save_suite, SuiteParams};
use vgplan::harness::report::{read_episodes_jsonl, render_table, summarize, write_reports};
use vgplan::harness::{ensure_disjoint_seeds, evaluate, AgentMode, EpisodeModels};
use vgplan::pipeline;

#[derive(Parser)]
#[command(name = "vgplan", version, about = "Value-guided multi-path reflective planning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// JSON experiment config; defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("loading config {}", path.display())),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a task suite file.
    GenTasks {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: u32,
        /// Piece count: a single value ("4") or an inclusive range ("3-6").
        #[arg(long)]
        pieces: Option<String>,
        #[arg(long)]
        dep_density: Option<f64>,
        #[arg(long)]
        orient_frac: Option<f64>,
        #[arg(long)]
        misplace_prob: Option<f64>,
        /// Initial-placement variants per structural seed.
        #[arg(long)]
        variants: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Behavior-clone the base policy on expert demonstrations.
    TrainBc {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out_policy: PathBuf,
    },
    /// Interactive post-training round(s); also dumps critic/trigger data.
    Posttrain {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        in_policy: PathBuf,
        #[arg(long)]
        out_policy: PathBuf,
        #[arg(long)]
        out_critic_data: PathBuf,
        #[arg(long)]
        out_trigger_data: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        n_traj: Option<usize>,
        #[arg(long)]
        mix_p: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Fit the advantage critic on a JSONL dataset.
    TrainCritic {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to update (the critic section is replaced).
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Fit the early-exit trigger on a JSONL dataset.
    TrainTrigger {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Calibrate the early-exit threshold on the trigger data's
    /// validation slice and store it in the checkpoint.
    CalibrateTrigger {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        min_recall: Option<f64>,
        #[arg(long)]
        seed: u64,
    },
    /// Evaluate configured modes over a task suite.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        tasks: PathBuf,
        /// Training suite for the seed-disjointness check.
        #[arg(long)]
        train_tasks: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Comma-separated mode labels (overrides config).
        #[arg(long, value_delimiter = ',')]
        modes: Vec<String>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        repetitions: Option<u32>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate the full ablation matrix (aggregation strategies, oracle
    /// value, trigger).
    Ablate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        train_tasks: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Recompute summary and table from an episodes JSONL file.
    Report {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_pieces(spec: &str) -> Result<(u8, u8)> {
    if let Some((lo, hi)) = spec.split_once('-') {
        Ok((lo.trim().parse()?, hi.trim().parse()?))
    } else {
        let p: u8 = spec.trim().parse()?;
        Ok((p, p))
    }
}

fn run_eval(
    config: &ConfigArg,
    tasks: &PathBuf,
    train_tasks: &Option<PathBuf>,
    ckpt_path: &PathBuf,
    seed: u64,
    modes: &[AgentMode],
    epsilon: Option<f64>,
    tau_flag: Option<f64>,
    repetitions: Option<u32>,
    out_dir: &PathBuf,
) -> Result<()> {
    let mut cfg = config.load()?;
    if let Some(e) = epsilon {
        cfg.env.epsilon = e;
    }
    let suite = load_suite(tasks)?;
    if let Some(train_path) = train_tasks {
        let train = load_suite(train_path)?;
        ensure_disjoint_seeds(&train, &suite)?;
    }
    let ckpt = Checkpoint::load(ckpt_path)?;
    let policy = ckpt.policy_model::<f64>()?;
    let critic = ckpt
        .critic_model::<f64>()
        .unwrap_or_else(|_| vgplan::critic::CriticModel::zeros(vgplan::critic::CriticShape {
            obs_len: vgplan::env::OBS_LEN,
            hidden: cfg.critic.hidden,
        }));
    let trigger = ckpt
        .trigger_model::<f64>()
        .unwrap_or_else(|_| vgplan::trigger::TriggerModel::zeros(vgplan::trigger::TriggerShape {
            input: cfg.policy.hidden,
            hidden: cfg.trigger.hidden,
        }));
    let tau = tau_flag.or(ckpt.tau).unwrap_or(cfg.eval.tau);
    let opts = pipeline::episode_opts(&cfg, tau, seed);
    let models = EpisodeModels {
        policy: &policy,
        critic: &critic,
        trigger: &trigger,
    };
    let reps = repetitions.unwrap_or(cfg.eval.repetitions);
    let episodes = evaluate(&suite, &models, modes, &opts, reps, seed);
    let summary = write_reports(out_dir, &episodes)?;
    print!("{}", render_table(&summary));
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenTasks {
            config,
            seed,
            count,
            pieces,
            dep_density,
            orient_frac,
            misplace_prob,
            variants,
            out,
        } => {
            let cfg = config.load()?;
            let mut params = SuiteParams {
                base_seed: seed,
                count,
                ..cfg.tasks.train
            };
            if let Some(spec) = pieces {
                let (lo, hi) = parse_pieces(&spec)?;
                params.pieces_min = lo;
                params.pieces_max = hi;
            }
            if let Some(d) = dep_density {
                params.dep_density = d;
            }
            if let Some(o) = orient_frac {
                params.orient_frac = o;
            }
            if let Some(m) = misplace_prob {
                params.misplace_prob = m;
            }
            if let Some(v) = variants {
                params.variants = v;
            }
            let tasks = generate_suite(&params)?;
            save_suite(&out, &tasks)?;
            println!("wrote {} tasks to {}", tasks.len(), out.display());
        }
        Command::TrainBc {
            config,
            tasks,
            seed,
            epochs,
            out_policy,
        } => {
            let mut cfg = config.load()?;
            if let Some(e) = epochs {
                cfg.policy.bc_epochs = e;
            }
            let suite = load_suite(&tasks)?;
            let (policy, demos, _) = pipeline::pretrain_bc::<f64>(&cfg, &suite, seed)?;
            let mut ckpt = Checkpoint::new();
            ckpt.set_policy(&policy);
            ckpt.save(&out_policy)?;
            println!(
                "trained base policy on {} demonstrations; checkpoint at {}",
                demos.len(),
                out_policy.display()
            );
        }
        Command::Posttrain {
            config,
            tasks,
            in_policy,
            out_policy,
            out_critic_data,
            out_trigger_data,
            seed,
            iters,
            n_traj,
            mix_p,
            epsilon,
        } => {
            let mut cfg = config.load()?;
            if let Some(i) = iters {
                cfg.posttrain.iters = i;
            }
            if let Some(n) = n_traj {
                cfg.posttrain.n_traj = n;
            }
            if let Some(p) = mix_p {
                cfg.posttrain.mix_p = p;
            }
            if let Some(e) = epsilon {
                cfg.env.epsilon = e;
            }
            let suite = load_suite(&tasks)?;
            let mut ckpt = Checkpoint::load(&in_policy)?;
            let mut policy = ckpt.policy_model::<f64>()?;
            // Rebuild the demonstration dataset the base policy was
            // trained on so aggregation starts from D*.
            let (demos, critic_anchor) = vgplan::dagger::collect_demos(
                &policy,
                &suite,
                cfg.env.epsilon,
                cfg.policy.horizon,
                cfg.posttrain.max_steps,
                vgplan::seeding::derive_seed(seed, &[0xDE30]),
            );
            let output = pipeline::run_posttrain(&cfg, &mut policy, &demos, &suite, seed)?;
            let mut critic_data = critic_anchor;
            critic_data.extend(output.critic_data);
            ckpt.set_policy(&policy);
            ckpt.save(&out_policy)?;
            write_critic_jsonl(&out_critic_data, &critic_data)?;
            write_trigger_jsonl(&out_trigger_data, &output.trigger_data)?;
            println!(
                "post-trained over {} rollouts (goal rate {:.2}); dataset {} -> {} examples",
                output.stats.rollouts,
                output.stats.goal_rate,
                output.stats.dataset_sizes.first().copied().unwrap_or(0),
                output.stats.dataset_sizes.last().copied().unwrap_or(0),
            );
            println!(
                "critic data: {} examples, trigger data: {} examples",
                critic_data.len(),
                output.trigger_data.len()
            );
        }
        Command::TrainCritic {
            config,
            data,
            ckpt: ckpt_path,
            seed,
        } => {
            let cfg = config.load()?;
            let examples = read_critic_jsonl::<f64>(&data)?;
            let (critic, report) = pipeline::train_critic_from(&cfg, &examples, seed)?;
            let mut ckpt = Checkpoint::load(&ckpt_path)?;
            ckpt.set_critic(&critic);
            ckpt.save(&ckpt_path)?;
            println!(
                "critic: val MSE {:.4} (label variance {:.4}, best epoch {})",
                report.val_mse, report.val_label_variance, report.best_epoch
            );
            if report.val_mse >= report.val_label_variance {
                bail!("critic failed to beat the constant predictor");
            }
        }
        Command::TrainTrigger {
            config,
            data,
            ckpt: ckpt_path,
            seed,
        } => {
            let cfg = config.load()?;
            let examples = read_trigger_jsonl::<f64>(&data)?;
            let (trigger, report) = pipeline::train_trigger_from(&cfg, &examples, seed)?;
            let mut ckpt = Checkpoint::load(&ckpt_path)?;
            ckpt.set_trigger(&trigger);
            ckpt.save(&ckpt_path)?;
            println!(
                "trigger: val accuracy {:.3}, recall on incorrect {:.3} (pos weight {:.3})",
                report.val_accuracy, report.val_recall_incorrect, report.pos_weight
            );
        }
        Command::CalibrateTrigger {
            config,
            data,
            ckpt: ckpt_path,
            min_recall,
            seed,
        } => {
            let mut cfg = config.load()?;
            if let Some(r) = min_recall {
                cfg.trigger.min_recall_incorrect = r;
            }
            let examples = read_trigger_jsonl::<f64>(&data)?;
            let mut ckpt = Checkpoint::load(&ckpt_path)?;
            let trigger = ckpt.trigger_model::<f64>()?;
            let tau = pipeline::calibrate_tau(&cfg, &trigger, &examples, seed)?;
            ckpt.tau = Some(tau);
            ckpt.save(&ckpt_path)?;
            println!(
                "calibrated tau = {tau:.6} at min recall {:.2}",
                cfg.trigger.min_recall_incorrect
            );
        }
        Command::Eval {
            config,
            tasks,
            train_tasks,
            ckpt,
            seed,
            modes,
            epsilon,
            tau,
            repetitions,
            out_dir,
        } => {
            let cfg = config.load()?;
            let labels = if modes.is_empty() {
                cfg.eval.modes.clone()
            } else {
                modes
            };
            let parsed: Vec<AgentMode> = labels
                .iter()
                .map(|l| {
                    AgentMode::parse(l).with_context(|| format!("unknown mode label: {l}"))
                })
                .collect::<Result<_>>()?;
            run_eval(
                &config,
                &tasks,
                &train_tasks,
                &ckpt,
                seed,
                &parsed,
                epsilon,
                tau,
                repetitions,
                &out_dir,
            )?;
        }
        Command::Ablate {
            config,
            tasks,
            train_tasks,
            ckpt,
            seed,
            out_dir,
        } => {
            run_eval(
                &config,
                &tasks,
                &train_tasks,
                &ckpt,
                seed,
                &AgentMode::ablation_matrix(),
                None,
                None,
                None,
                &out_dir,
            )?;
        }
        Command::Report { episodes, out_dir } => {
            let records = read_episodes_jsonl(&episodes)?;
            std::fs::create_dir_all(&out_dir)?;
            let summary = summarize(&records);
            vgplan::harness::report::write_summary_json(&out_dir.join("summary.json"), &summary)?;
            vgplan::harness::report::write_table(&out_dir.join("table.txt"), &summary)?;
            print!("{}", render_table(&summary));
        }
    }
    Ok(())
}
