//! Measurements shared by the focused tests and the acceptance run. Each
//! returns the observed error so callers decide on the threshold.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mrts::engine::{
    observe, ActionType, GridState, JointAction, Player, ACTION_LOGITS, COMPONENT_OFFSETS, COMPONENT_WIDTHS, FEATURES,
    GROUP_OFFSETS, GROUP_WIDTHS,
};
use mrts::numerics::{gradcheck, Encoder, EncoderConfig, Gradients, Init, NumericsError, ParamStore, Tape, Tensor, Var};
use mrts::policy::{log_prob_of, sample_units, to_joint_action, ModelConfig, Policy, PolicyInput, OWN};
use mrts::scripted_ai::BotKind;

/// A mid-game 8x8 state where every block holds at least two rows.
pub fn busy_input() -> PolicyInput {
    super::reachable_states("8x8", 400, 11)
        .into_iter()
        .map(|(s, p)| PolicyInput::from_state(&s, p))
        .find(|i| i.entities.partition.iter().all(|&n| n >= 2) && i.units() >= 3)
        .expect("a state with populated blocks")
}

/// Applies `perm` (new row -> old row) to one block of the input.
pub fn permute_block(input: &PolicyInput, block: usize, perm: &[usize]) -> PolicyInput {
    let mut out = input.clone();
    let start: usize = input.entities.partition[..block].iter().sum();
    for (new, &old) in perm.iter().enumerate() {
        let (dst, src) = (start + new, start + old);
        out.entities.positions[dst] = input.entities.positions[src];
        out.entities.features[dst * FEATURES..(dst + 1) * FEATURES].copy_from_slice(input.entities.row_features(src));
        if block == OWN {
            out.unit_masks[dst * ACTION_LOGITS..(dst + 1) * ACTION_LOGITS].copy_from_slice(input.unit_mask(src));
            out.sources[dst] = input.sources[src];
        }
    }
    out
}

pub fn model_8x8(seed: u64) -> (Policy, ParamStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Policy::new(ModelConfig::for_map(8, 8), &mut rng).unwrap()
}

/// Largest deviation between encoding shuffled rows and shuffling the encoding.
pub fn encoder_equivariance_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EncoderConfig {
        layers: 2,
        heads: 3,
        model_dim: 12,
        ff_dim: 10,
        dropout: 0.1,
    };
    let mut store = ParamStore::new();
    let enc = Encoder::register(&mut store, "enc", cfg, Init::HeNormal, Init::Normal { std: 0.1 }, &mut rng).unwrap();
    let n = 7;
    let x: Vec<f64> = (0..n * 12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let px: Vec<f64> = perm.iter().flat_map(|&r| x[r * 12..(r + 1) * 12].to_vec()).collect();

    let mut tape = Tape::new(&store);
    let a = tape.constant(Tensor::matrix(n, 12, x));
    let b = tape.constant(Tensor::matrix(n, 12, px));
    let ya = enc.forward(&mut tape, a, &[(0, n)], &mut rng, false).unwrap();
    let yb = enc.forward(&mut tape, b, &[(0, n)], &mut rng, false).unwrap();
    let (ya, yb) = (tape.value(ya), tape.value(yb));
    let mut worst: f64 = 0.0;
    for (new, &old) in perm.iter().enumerate() {
        for c in 0..12 {
            worst = worst.max((yb.row(new)[c] - ya.row(old)[c]).abs());
        }
    }
    worst
}

/// Shuffles each entity block in turn. Returns the largest change in the
/// state value and the largest mismatch between the actor logits and the
/// correspondingly permuted originals.
pub fn block_symmetry_error(policy: &Policy, store: &ParamStore, input: &PolicyInput, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let value = policy.critic_value(store, input).unwrap();
    let logits = policy.actor_logits(store, input).unwrap();
    let (mut critic, mut actor): (f64, f64) = (0.0, 0.0);
    for block in 0..3 {
        let n = input.entities.partition[block];
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        perm.shuffle(&mut rng);
        let p = permute_block(input, block, &perm);
        critic = critic.max((policy.critic_value(store, &p).unwrap() - value).abs());
        let l = policy.actor_logits(store, &p).unwrap();
        for u in 0..input.units() {
            let old = if block == OWN { perm[u] } else { u };
            for j in 0..ACTION_LOGITS {
                actor = actor.max((l.row(u)[j] - logits.row(old)[j]).abs());
            }
        }
    }
    (critic, actor)
}

/// Gap between the model's joint log-probability of a sampled action and
/// the sum of per-component masked log-softmax terms computed from the raw
/// logits.
pub fn factorization_error(policy: &Policy, store: &ParamStore, input: &PolicyInput, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = policy.actor_logits(store, input).unwrap();
    let mut tape = Tape::new(store);
    let out = policy.forward(&mut tape, &[input], &mut rng, false).unwrap();
    let choices = sample_units(tape.value(out.logp), &mut rng);
    let lp = log_prob_of(&mut tape, &out, &choices).unwrap();
    let joint = tape.value(lp).item();

    let mut sum = 0.0;
    for (u, c) in choices.iter().enumerate() {
        let mask = input.unit_mask(u);
        for comp in 0..7 {
            let o = COMPONENT_OFFSETS[comp];
            let live: Vec<f64> = (o..o + COMPONENT_WIDTHS[comp]).filter(|&j| mask[j]).map(|j| logits.row(u)[j]).collect();
            let m = live.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + live.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            sum += logits.row(u)[o + c[comp] as usize] - lse;
        }
    }
    (joint - sum).abs()
}

type OpCase = Box<dyn Fn(&mut Tape<'_>, &[Var]) -> Result<Var, NumericsError>>;

fn op_cases() -> Vec<(&'static str, OpCase)> {
    vec![
        ("matmul", Box::new(|t, p| t.matmul(p[0], p[1]))),
        ("matmul_bt", Box::new(|t, p| t.matmul_bt(p[0], p[2]))),
        ("add", Box::new(|t, p| t.add(p[0], p[2]))),
        ("sub", Box::new(|t, p| t.sub(p[0], p[2]))),
        ("mul", Box::new(|t, p| t.mul(p[0], p[2]))),
        ("minimum", Box::new(|t, p| t.minimum(p[0], p[2]))),
        ("add_row", Box::new(|t, p| t.add_row(p[0], p[3]))),
        ("linear", Box::new(|t, p| t.linear(p[0], p[1], p[4]))),
        ("scale", Box::new(|t, p| Ok(t.scale(p[0], -1.7)))),
        ("relu", Box::new(|t, p| Ok(t.relu(p[0])))),
        ("exp", Box::new(|t, p| Ok(t.exp(p[0])))),
        ("square", Box::new(|t, p| Ok(t.square(p[0])))),
        ("clamp", Box::new(|t, p| Ok(t.clamp(p[0], -0.5, 0.5)))),
        ("softmax_rows", Box::new(|t, p| Ok(t.softmax_rows(p[0])))),
        ("log_softmax_rows", Box::new(|t, p| Ok(t.log_softmax_rows(p[0])))),
        ("layer_norm", Box::new(|t, p| t.layer_norm(p[0], p[3], p[5]))),
        (
            "dropout",
            Box::new(|t, p| {
                let mut rng = ChaCha8Rng::seed_from_u64(4);
                Ok(t.dropout(p[0], 0.3, &mut rng, true))
            }),
        ),
        (
            "mask_fill",
            Box::new(|t, p| {
                let keep = [true, false, true, true, false, true, true, true, false, true, true, true];
                t.mask_fill(p[0], &keep, -3.0)
            }),
        ),
        ("slice_cols", Box::new(|t, p| t.slice_cols(p[0], 1, 3))),
        ("slice_rows", Box::new(|t, p| t.slice_rows(p[0], 1, 3))),
        ("concat_cols", Box::new(|t, p| t.concat_cols(&[p[0], p[2], p[0]]))),
        ("concat_rows", Box::new(|t, p| t.concat_rows(&[p[0], p[3]]))),
        ("gather_rows", Box::new(|t, p| t.gather_rows(p[0], &[2, 0, 2]))),
        ("gather", Box::new(|t, p| t.gather(p[0], &[11, 3, 3, 0]))),
        ("sum", Box::new(|t, p| Ok(t.sum(p[0])))),
        ("mean", Box::new(|t, p| Ok(t.mean(p[0])))),
        ("sum_rows", Box::new(|t, p| Ok(t.sum_rows(p[0])))),
        ("reshape", Box::new(|t, p| t.reshape(p[0], &[4, 3]))),
        ("scatter_rows", Box::new(|t, p| t.scatter_rows(p[0], &[Some((1, 0.5)), None, Some((1, 2.0))], 2))),
        ("group_log_softmax", Box::new(|t, p| t.group_log_softmax(p[0], &[1, 3]))),
        (
            "segment_attention",
            Box::new(|t, p| {
                let q = t.matmul(p[0], p[1])?;
                t.segment_attention(q, p[6], p[7], &[(0, 2), (2, 1)], 1)
            }),
        ),
        ("segment_attention_heads", Box::new(|t, p| t.segment_attention(p[0], p[2], p[0], &[(0, 3)], 2))),
    ]
}

/// Central-difference check of every tape operation on a small random
/// problem. Each case reduces `sum(op(params) * probe)` with a distinct
/// weight per output element.
pub fn op_gradient_errors(step: f64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let shapes: [&[usize]; 8] = [&[3, 4], &[4, 4], &[3, 4], &[1, 4], &[1, 4], &[1, 4], &[3, 4], &[3, 4]];
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(format!("p{i}"), Init::Normal { std: 1.0 }.tensor(s, &mut rng)))
        .collect();
    op_cases()
        .into_iter()
        .map(|(name, f)| {
            let build = |s: &ParamStore| -> Result<(f64, Gradients), NumericsError> {
                let mut t = Tape::new(s);
                let p: Vec<Var> = ids.iter().map(|&id| t.param(id)).collect();
                let y = f(&mut t, &p)?;
                let n = t.value(y).numel();
                let shape = t.value(y).shape().to_vec();
                let probe = t.constant(Tensor::new(shape, (0..n).map(|i| 0.3 + 0.37 * i as f64).collect())?);
                let prod = t.mul(y, probe)?;
                let loss = t.sum(prod);
                Ok((t.value(loss).item(), t.backward(loss)?))
            };
            let (_, grads) = build(&store).unwrap();
            let res = gradcheck::check(&store, &grads, step, 1, |s| Ok(build(s)?.0)).unwrap();
            (name, res.max_rel_error)
        })
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct MaskReport {
    pub states: usize,
    pub units: usize,
    /// Sampled joint actions the engine had to coerce.
    pub coerced: usize,
    /// Largest probability given to any masked entry.
    pub max_masked_prob: f64,
    pub combat_units: usize,
    /// Largest produce probability given to a combat unit.
    pub max_combat_produce: f64,
}

/// Samples the policy on `n` reachable states of `map` that have at least
/// one controllable unit and measures mask violations.
pub fn masked_sampling(policy: &Policy, store: &ParamStore, map: &str, n: usize, seed: u64) -> MaskReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<_> = super::reachable_states(map, n * 2, seed)
        .into_iter()
        .map(|(s, p)| {
            let input = PolicyInput::from_state(&s, p);
            (s, p, input)
        })
        .filter(|(_, _, i)| i.units() > 0)
        .take(n)
        .collect();
    let mut rep = MaskReport {
        states: states.len(),
        ..MaskReport::default()
    };
    let produce = ActionType::Produce as usize;
    for chunk in states.chunks(32) {
        let inputs: Vec<&PolicyInput> = chunk.iter().map(|(_, _, i)| i).collect();
        let mut tape = Tape::new(store);
        let out = policy.forward(&mut tape, &inputs, &mut rng, false).unwrap();
        let logp = tape.value(out.logp).clone();
        let choices = sample_units(&logp, &mut rng);
        for ((state, player, input), rows) in chunk.iter().zip(&out.unit_rows) {
            for (u, r) in rows.clone().enumerate() {
                rep.units += 1;
                let row = logp.row(r);
                let mask = input.unit_mask(u);
                for j in 0..ACTION_LOGITS {
                    if !mask[j] {
                        rep.max_masked_prob = rep.max_masked_prob.max(row[j].exp());
                    }
                }
                let kind = state.unit_at_cell(input.unit_cell(u)).expect("own unit").kind;
                if kind.is_combat() {
                    rep.combat_units += 1;
                    rep.max_combat_produce = rep.max_combat_produce.max(row[produce].exp());
                }
            }
            let joint = to_joint_action(input, &choices[rows.clone()]);
            let empty = JointAction::new();
            let (a1, a2) = if *player == Player::P1 { (&joint, &empty) } else { (&empty, &joint) };
            let (_, outcome) = state.step(a1, a2).unwrap();
            if outcome.coerced[player.index()] > 0 {
                rep.coerced += 1;
            }
        }
    }
    rep
}

/// Plays one scripted game twice from the same seed, checking conservation
/// and occupancy invariants every tick and that both runs agree tick by tick.
pub fn scripted_game_invariants(map: &str, seed: u64, p1: BotKind, p2: BotKind, step_limit: u32) -> Result<u32, String> {
    let play = |check: bool| -> Result<Vec<String>, String> {
        let mut s = GridState::bundled(map, seed).map_err(|e| e.to_string())?.with_step_limit(step_limit);
        let ledger = s.resource_ledger();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut digests = vec![s.digest()];
        while !s.status().is_terminal() {
            let a1 = p1.act(&s, Player::P1, &mut rng);
            let a2 = p2.act(&s, Player::P2, &mut rng);
            let o = s.advance(&a1, &a2).map_err(|e| e.to_string())?;
            digests.push(s.digest());
            if !check {
                continue;
            }
            let tick = s.tick();
            if o.coerced != [0, 0] {
                return Err(format!("tick {tick}: scripted orders coerced {:?}", o.coerced));
            }
            if s.resource_ledger() != ledger {
                return Err(format!("tick {tick}: resources {} != {ledger}", s.resource_ledger()));
            }
            let cells: HashSet<_> = s.units().iter().map(|u| u.pos).collect();
            if cells.len() != s.units().len() || s.entity_count() > s.cells() {
                return Err(format!("tick {tick}: overlapping units"));
            }
            for player in [Player::P1, Player::P2] {
                let obs = observe(&s, player);
                for c in 0..s.cells() {
                    for (o, w) in GROUP_OFFSETS.iter().zip(GROUP_WIDTHS) {
                        if obs.cell(c)[*o..o + w].iter().map(|&b| b as u32).sum::<u32>() != 1 {
                            return Err(format!("tick {tick}: cell {c} group at {o} not one-hot"));
                        }
                    }
                }
            }
        }
        Ok(digests)
    };
    let a = play(true)?;
    let b = play(false)?;
    if a != b {
        let at = a.iter().zip(&b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()));
        return Err(format!("replay diverged at tick {at}"));
    }
    Ok(a.len() as u32 - 1)
}
