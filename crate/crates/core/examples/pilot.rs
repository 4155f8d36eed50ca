// Dev pilot: runs the full desk-scale protocol once and prints the mode
// matrix, to size the acceptance thresholds. Not part of the deliverable.

use std::time::Instant;

use vgplan::config::ExperimentConfig;
use vgplan::env::generate_suite;
use vgplan::harness::report::{render_table, summarize};
use vgplan::harness::{evaluate, AgentMode, EpisodeModels, ModeKind};
use vgplan::pipeline;

fn main() {
    let mut cfg = ExperimentConfig::default();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(1);
    if let Some(n) = args.next() {
        cfg.posttrain.n_traj = n.parse().unwrap();
    }
    if let Some(n) = args.next() {
        cfg.tasks.train.count = n.parse().unwrap();
    }
    if let Some(n) = args.next() {
        cfg.tasks.eval.count = n.parse().unwrap();
    }
    let t0 = Instant::now();
    let train_suite = generate_suite(&cfg.tasks.train).unwrap();
    let eval_suite = generate_suite(&cfg.tasks.eval).unwrap();
    println!(
        "suites: train {} eval {} ({:.1}s)",
        train_suite.len(),
        eval_suite.len(),
        t0.elapsed().as_secs_f64()
    );
    if let Ok(epochs) = std::env::var("BC_EPOCHS") {
        cfg.policy.bc_epochs = epochs.parse().unwrap();
    }
    if let Ok(epochs) = std::env::var("PT_EPOCHS") {
        cfg.policy.posttrain_epochs = epochs.parse().unwrap();
    }
    if let Ok(lr) = std::env::var("LR") {
        cfg.policy.learning_rate = lr.parse().unwrap();
    }
    let t = Instant::now();
    let (mut policy, demos, critic_anchor) =
        pipeline::pretrain_bc::<f64>(&cfg, &train_suite, seed).unwrap();
    let base_policy = policy.clone();
    println!(
        "pretrain: {} demos ({:.1}s)",
        demos.len(),
        t.elapsed().as_secs_f64()
    );
    // Training-set accuracy of the base policy.
    let acc = demos
        .iter()
        .filter(|ex| policy.propose(&ex.ctx).action == ex.target)
        .count() as f64
        / demos.len() as f64;
    println!("bc train accuracy {acc:.3}");
    let t = Instant::now();
    let output = pipeline::run_posttrain(&cfg, &mut policy, &demos, &train_suite, seed).unwrap();
    println!(
        "posttrain: rollouts {} goal rate {:.2} dataset {:?} ({:.1}s)",
        output.stats.rollouts,
        output.stats.goal_rate,
        output.stats.dataset_sizes,
        t.elapsed().as_secs_f64()
    );
    let t = Instant::now();
    let mut critic_data = critic_anchor;
    critic_data.extend(output.critic_data.clone());
    let (critic, critic_report) = pipeline::train_critic_from(&cfg, &critic_data, seed).unwrap();
    println!(
        "critic: {} examples val mse {:.4} vs label var {:.4} best epoch {} ({:.1}s)",
        critic_data.len(),
        critic_report.val_mse,
        critic_report.val_label_variance,
        critic_report.best_epoch,
        t.elapsed().as_secs_f64()
    );
    let t = Instant::now();
    let (trigger, trig_report) =
        pipeline::train_trigger_from(&cfg, &output.trigger_data, seed).unwrap();
    let tau = pipeline::calibrate_tau(&cfg, &trigger, &output.trigger_data, seed).unwrap();
    println!(
        "trigger: {} examples val acc {:.3} recall0 {:.3} tau {:.3} ({:.1}s)",
        output.trigger_data.len(),
        trig_report.val_accuracy,
        trig_report.val_recall_incorrect,
        tau,
        t.elapsed().as_secs_f64()
    );
    // Base-policy BC eval.
    let opts = pipeline::episode_opts(&cfg, tau, seed);
    let t = Instant::now();
    let base_models = EpisodeModels {
        policy: &base_policy,
        critic: &critic,
        trigger: &trigger,
    };
    let mut episodes = evaluate(
        &eval_suite,
        &base_models,
        &[AgentMode::new(ModeKind::Bc)],
        &opts,
        1,
        seed,
    );
    for e in &mut episodes {
        e.mode = "bc-base".into();
    }
    println!("bc-base eval ({:.1}s)", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let models = EpisodeModels {
        policy: &policy,
        critic: &critic,
        trigger: &trigger,
    };
    let matrix = AgentMode::ablation_matrix();
    episodes.extend(evaluate(&eval_suite, &models, &matrix, &opts, 1, seed));
    println!("matrix eval ({:.1}s)", t.elapsed().as_secs_f64());
    let summary = summarize(&episodes);
    print!("{}", render_table(&summary));
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
