//! Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any deterministic criterion fails. The two desk-scale learning checks
//! are printed with their verdict but do not gate the exit status. Set
//! `MRTS_SKIP_DESK_SCALE=1` to skip them; they train for about an hour on one
//! core.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mrts::engine::{observe, GridState, MapSpec, Player};
use mrts::harness::{evaluate, export_stats, load_policy, read_metrics, train, EvalOptions, RunConfig, TrainOptions};
use mrts::numerics::{gradcheck, Tensor};
use mrts::policy::{feature_map, ModelConfig, Policy};
use mrts::ppo::compute_gae;
use mrts::scripted_ai::BotKind;

use common::checks;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn parameter_counts() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, small) = Policy::new(ModelConfig::for_map(8, 8), &mut rng).unwrap();
    let (_, large) = Policy::new(ModelConfig::for_map(16, 16), &mut rng).unwrap();
    let actor = small.count_prefix("actor.");
    let critic = small.count_prefix("critic.w") + small.count_prefix("critic.b");
    let agg = small.count_prefix("critic.agg");
    let embed = large.count_prefix("embed");
    let layer = small.count_prefix("encoder.layer0.");
    let (total8, total16) = (small.count(), large.count());
    let within = |got: usize, want: usize| (got as f64 - want as f64).abs() / want as f64 <= 0.05;
    // 5 layers + actor + per-entity critic = 645463; the remaining difference
    // to 645470 is the group aggregation: 6 weights + 6 biases here vs 7 there
    let itemized = 5 * layer + actor + critic + agg == total8 && total8 - 645_470 == agg - 7 && total16 - total8 == embed;
    verdict(
        actor == 7176 && critic == 92 && embed == 16_384 && within(total8, 645_470) && within(total16, 661_854) && itemized,
        format!(
            "actor {actor}, critic {critic}, embedding {embed}; 8x8 total {total8} vs 645470, 16x16 total {total16} vs 661854; \
             itemized: 5 x {layer} encoder + {actor} + {critic} + {agg} aggregation (+{} from aggregation biases)",
            agg - 7
        ),
    )
}

fn gradient_suite() -> Verdict {
    let ops = checks::op_gradient_errors(1e-5);
    let (worst_op, op_err) = ops.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let (loss_err, checked) = policy_loss_gradient();
    verdict(
        op_err < 1e-4 && loss_err < 1e-4,
        format!(
            "{} ops, worst {worst_op} {op_err:.2e}; full policy loss on 2-entity state, {checked} params, max rel err {loss_err:.2e}",
            ops.len()
        ),
    )
}

/// PPO loss with dropout on a toy state, checked on every parameter.
fn policy_loss_gradient() -> (f64, usize) {
    use mrts::engine::Player;
    use mrts::numerics::Tape;
    use mrts::policy::{entropy_of, log_prob_of, sample_units, PolicyInput};
    use mrts::ppo::{ppo_loss, PpoConfig};

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (policy, store) = Policy::new(common::toy_model(), &mut rng).unwrap();
    let input = PolicyInput::from_state(&common::toy_state(), Player::P1);
    assert_eq!(input.entities.len(), 2);
    let mut tape = Tape::new(&store);
    let out = policy.forward(&mut tape, &[&input], &mut rng, false).unwrap();
    let choices = sample_units(tape.value(out.logp), &mut rng);
    let lp = log_prob_of(&mut tape, &out, &choices).unwrap();
    let old_lp = tape.value(lp).item() + 0.03;
    let old_v = tape.value(out.values).item() - 0.2;
    let loss = |s: &mrts::numerics::ParamStore| {
        let mut tape = Tape::new(s);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let out = policy.forward(&mut tape, &[&input], &mut rng, true).unwrap();
        let lp = log_prob_of(&mut tape, &out, &choices).unwrap();
        let h = entropy_of(&mut tape, &out).unwrap();
        let cfg = PpoConfig {
            clip_value_loss: true,
            ..PpoConfig::default()
        };
        let t = ppo_loss(&mut tape, lp, &[old_lp], &[0.7], out.values, &[1.3], &[old_v], h, &cfg, 1.0).unwrap();
        (tape.value(t.total).item(), tape.backward(t.total).unwrap())
    };
    let (_, grads) = loss(&store);
    let res = gradcheck::check(&store, &grads, 1e-4, 1, |s| Ok(loss(s).0)).unwrap();
    (res.max_rel_error, res.checked)
}

fn masking_suite() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    let mut combat = 0;
    for (map, seed) in [("8x8", 21u64), ("16x16", 22)] {
        let side = if map == "8x8" { 8 } else { 16 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (policy, store) = Policy::new(ModelConfig::for_map(side, side), &mut rng).unwrap();
        let r = checks::masked_sampling(&policy, &store, map, 5000, seed);
        ok &= r.states == 5000 && r.coerced == 0 && r.max_masked_prob <= 1e-30 && r.max_combat_produce == 0.0;
        combat += r.combat_units;
        parts.push(format!(
            "{map}: {} states, {} units, {} coerced, max masked p {:.1e}, {} combat units with max produce p {:.1e}",
            r.states, r.units, r.coerced, r.max_masked_prob, r.combat_units, r.max_combat_produce
        ));
    }
    verdict(ok && combat > 0, parts.join("; "))
}

fn factorization_and_equivariance() -> Verdict {
    let enc = (0..3).map(checks::encoder_equivariance_error).fold(0.0, f64::max);
    let input = checks::busy_input();
    let (mut critic, mut actor, mut fact): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for seed in 0..3 {
        let (policy, store) = checks::model_8x8(seed);
        let (c, a) = checks::block_symmetry_error(&policy, &store, &input, seed + 10);
        critic = critic.max(c);
        actor = actor.max(a);
        fact = fact.max(checks::factorization_error(&policy, &store, &input, seed + 20));
    }
    verdict(
        fact < 1e-12 && enc < 1e-6 && critic < 1e-6 && actor < 1e-6,
        format!("joint vs component sum {fact:.1e}; encoder {enc:.1e}; critic {critic:.1e}; actor {actor:.1e}"),
    )
}

fn gae_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut boundaries): (f64, usize) = (0.0, 0);
    for _ in 0..1000 {
        let n = rng.random_range(1..24);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
        boundaries += d.iter().filter(|&&x| x).count();
        let boot = rng.random_range(-2.0..2.0);
        let gamma = rng.random_range(0.8..1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let got = compute_gae(&r, &v, &d, boot, gamma, lambda);
        let want = common::gae_direct(&r, &v, &d, boot, gamma, lambda);
        for t in 0..n {
            worst = worst.max((got.advantages[t] - want[t]).abs());
            worst = worst.max((got.returns[t] - want[t] - v[t]).abs());
        }
    }
    let leak = compute_gae(&[0.0, 0.0, 100.0], &[0.0; 3], &[false, true, false], 0.0, 0.99, 0.95);
    let isolated = leak.advantages[..2] == [0.0, 0.0];
    verdict(
        worst < 1e-10 && isolated && boundaries > 0,
        format!("1000 buffers, {boundaries} episode ends, max abs err {worst:.1e}, boundary isolation {isolated}"),
    )
}

fn feature_widths() -> Verdict {
    let s8 = GridState::bundled("8x8", 0).unwrap();
    let s16 = GridState::bundled("16x16", 0).unwrap();
    let w8 = feature_map(&observe(&s8, Player::P1)).one_hot_rows().dims2().1;
    let e16 = feature_map(&observe(&s16, Player::P1));
    let w16 = e16.one_hot_rows().dims2().1;
    let w16e = e16.embedded_rows(&Tensor::zeros(&[256, 64])).dims2().1;
    verdict(w8 == 91 && w16 == 283 && w16e == 91, format!("8x8 {w8}, 16x16 one-hot {w16}, 16x16 embedded {w16e}"))
}

fn engine_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ticks = 0u64;
    for g in 0..1000u64 {
        let map = if g % 2 == 0 { "8x8" } else { "16x16" };
        let p1 = BotKind::ALL[rng.random_range(0..BotKind::ALL.len())];
        let p2 = BotKind::ALL[rng.random_range(0..BotKind::ALL.len())];
        let limit = rng.random_range(200..=600);
        match checks::scripted_game_invariants(map, rng.random(), p1, p2, limit) {
            Ok(t) => ticks += t as u64,
            Err(e) => return Verdict::Fail(format!("game {g} {map} {} vs {}: {e}", p1.name(), p2.name())),
        }
    }
    Verdict::Pass(format!("1000 games, {ticks} ticks replayed twice; ledger, occupancy, one-hot and replay determinism hold"))
}

fn desk_dir() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-desk_8x8")
}

fn desk_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk_8x8.toml");
    let mut cfg = RunConfig::parse(&std::fs::read_to_string(path).unwrap()).unwrap();
    cfg.output_dir = desk_dir();
    cfg
}

struct DeskRun {
    updates: usize,
    first: f64,
    last: f64,
    wins: usize,
    ties: usize,
    losses: usize,
    win_rate: f64,
}

/// Trains (resuming if a partial run exists), then evaluates 50 sampled games
/// against the training opponent. Runs once; both desk criteria read it.
fn desk_run() -> Option<&'static DeskRun> {
    static RUN: OnceLock<Option<DeskRun>> = OnceLock::new();
    RUN.get_or_init(|| {
        if std::env::var("MRTS_SKIP_DESK_SCALE").is_ok_and(|v| v == "1") {
            return None;
        }
        let cfg = desk_config();
        let resume = cfg.output_dir.join("latest.ckpt").exists();
        let summary = train(&cfg, &TrainOptions { resume, quiet: true, ..Default::default() }).unwrap();
        let (records, _) = read_metrics(&cfg.output_dir.join("metrics.jsonl")).unwrap();
        let returns: Vec<f64> = records.iter().map(|r| r.shaped_return).collect();
        let k = 10.min(returns.len());
        let first = returns[..k].iter().sum::<f64>() / k as f64;
        let last = returns[returns.len() - k..].iter().sum::<f64>() / k as f64;

        let (policy, store, _) = load_policy(&summary.checkpoint).unwrap();
        let opts = EvalOptions {
            opponents: vec![BotKind::RandomBiased],
            games: 50,
            seed: 1_000_003,
            ..EvalOptions::default()
        };
        let report = evaluate(&policy, &store, &MapSpec::bundled("8x8").unwrap(), &opts).unwrap();
        let eval_dir = cfg.output_dir.join("eval");
        std::fs::create_dir_all(&eval_dir).unwrap();
        std::fs::write(eval_dir.join("eval_report.json"), serde_json::to_string_pretty(&report).unwrap()).unwrap();
        let row = &report.rows[0];
        Some(DeskRun {
            updates: records.len(),
            first,
            last,
            wins: row.wins,
            ties: row.ties,
            losses: row.losses,
            win_rate: row.win_rate(),
        })
    })
    .as_ref()
}

fn desk_return_trend() -> Verdict {
    let Some(r) = desk_run() else {
        return Verdict::Skip("MRTS_SKIP_DESK_SCALE=1".into());
    };
    verdict(
        r.last > r.first,
        format!(
            "{} updates; shaped return first-10 avg {:.3}, last-10 avg {:.3}",
            r.updates, r.first, r.last
        ),
    )
}

fn desk_win_rate() -> Verdict {
    let Some(r) = desk_run() else {
        return Verdict::Skip("MRTS_SKIP_DESK_SCALE=1".into());
    };
    verdict(
        r.win_rate >= 0.6,
        format!(
            "vs random-biased over 50 games: {}W/{}T/{}L = {:.0}% wins (need 60%)",
            r.wins,
            r.ties,
            r.losses,
            100.0 * r.win_rate
        ),
    )
}

/// Emits the statistics tables from a training run plus an evaluation with
/// replays. Uses the desk run when it exists, otherwise a short run.
fn statistics() -> Verdict {
    let mut cfg = desk_config();
    if !cfg.output_dir.join("metrics.jsonl").exists() {
        cfg.output_dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-stats");
        cfg.hyperparameters.parallel_bot_environments = 2;
        cfg.hyperparameters.number_of_exploration_steps = 16;
        cfg.hyperparameters.minibatch_size = 1;
        cfg.hyperparameters.update_epochs = 1;
        cfg.hyperparameters.max_training_steps = 2 * 2 * 16;
        train(&cfg, &TrainOptions { quiet: true, ..Default::default() }).unwrap();
    }
    let run = cfg.output_dir.clone();
    let (policy, store, _) = load_policy(&run.join("latest.ckpt")).unwrap();
    let eval_dir = run.join("stats-eval");
    let opts = EvalOptions {
        opponents: BotKind::ALL.to_vec(),
        games: 4,
        step_limit: 400,
        replay_dir: Some(eval_dir.join("replays")),
        ..EvalOptions::default()
    };
    let report = evaluate(&policy, &store, &MapSpec::bundled("8x8").unwrap(), &opts).unwrap();
    std::fs::write(eval_dir.join("eval_report.json"), serde_json::to_string_pretty(&report).unwrap()).unwrap();
    std::fs::copy(run.join("metrics.jsonl"), eval_dir.join("metrics.jsonl")).unwrap();
    let out = run.join("stats");
    let s = export_stats(&eval_dir, &out).unwrap();
    let expected = ["reward_breakdown.csv", "win_rate.csv", "training.csv", "eval_results.csv", "eval_rewards.csv", "entity_counts.csv"];
    let missing: Vec<&str> = expected.iter().copied().filter(|f| !out.join(f).exists()).collect();
    let header = std::fs::read_to_string(out.join("reward_breakdown.csv")).unwrap_or_default();
    verdict(
        missing.is_empty() && !report.entity_histogram.is_empty() && header.lines().count() > 1,
        format!(
            "{} files from {} updates and {} replays in {}; entity histogram has {} bins (max {}); missing {missing:?}",
            expected.len() - missing.len(),
            s.metrics_records,
            s.replays,
            out.display(),
            report.entity_histogram.len(),
            report.entity_max
        ),
    )
}

fn main() {
    // (name, check, gates the exit status)
    let criteria: [(&str, fn() -> Verdict, bool); 10] = [
        ("parameter counts", parameter_counts, true),
        ("gradient suite", gradient_suite, true),
        ("masking suite", masking_suite, true),
        ("factorization and equivariance", factorization_and_equivariance, true),
        ("GAE oracle", gae_oracle, true),
        ("feature-map widths", feature_widths, true),
        ("engine conservation and determinism", engine_properties, true),
        ("desk-scale return trend", desk_return_trend, false),
        ("desk-scale win rate", desk_win_rate, false),
        ("statistics emission", statistics, true),
    ];
    let (mut failed, mut reported) = (0, 0);
    for (name, check, gating) in criteria {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match v {
            Verdict::Pass(d) => println!("PASS {name} ({secs:.1}s): {d}"),
            Verdict::Skip(d) => println!("SKIP {name}: {d}"),
            Verdict::Fail(d) if gating => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {d}");
            }
            Verdict::Fail(d) => {
                reported += 1;
                println!("FAIL {name} ({secs:.1}s): {d} [learning check, does not gate the exit status]");
            }
        }
    }
    if reported > 0 {
        println!("{reported} learning criteria failed; see README");
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
