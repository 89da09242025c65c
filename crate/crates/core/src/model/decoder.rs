use mhg_autodiff::nn::{gru_cell, GruVars};
use mhg_autodiff::rng::{dropout_mask, keyed_rng};
use mhg_autodiff::{Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::loss::{target_steps, TargetSteps};
use super::{streams, Ctx, Mode, ModelError, ModelParams, Result};
use crate::grammar::{finish, DerivationState, Grammar, RuleSequence};
use crate::molgraph::Molecule;

/// Latent statistics and sample for a batch, one row per molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeOutput {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Vec<f64>,
}

fn check_len(v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(ModelError::ShapeMismatch {
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

fn row_leaf(ctx: &mut Ctx, v: &[f64]) -> Var {
    ctx.g
        .leaf(Tensor::from_vec(vec![1, v.len()], v.to_vec()).expect("row shape"))
}

/// `mu = tanh(eta_mu * Lin(h))`, `logvar = tanh(eta_sigma * Lin(h))`,
/// `z = mu + exp(logvar / 2) * noise`.
pub(crate) fn head(ctx: &mut Ctx, hg: Var, noise: Var) -> Result<(Var, Var, Var)> {
    let l = ctx.layout();
    let (w, b, eta) = (ctx.var(l.mu_w), ctx.var(l.mu_b), ctx.var(l.eta_mu));
    let mu = ctx.g.linear(hg, w, Some(b))?;
    let mu = ctx.g.scale_by(mu, eta)?;
    let mu = ctx.g.tanh(mu);
    let (w, b, eta) = (
        ctx.var(l.logvar_w),
        ctx.var(l.logvar_b),
        ctx.var(l.eta_sigma),
    );
    let lv = ctx.g.linear(hg, w, Some(b))?;
    let lv = ctx.g.scale_by(lv, eta)?;
    let logvar = ctx.g.tanh(lv);
    let half = ctx.g.mul_const(logvar, 0.5);
    let std = ctx.g.exp(half);
    let spread = ctx.g.mul(std, noise)?;
    let z = ctx.g.add(mu, spread)?;
    Ok((z, mu, logvar))
}

pub fn vae_head(h_g: &[f64], p: &ModelParams, noise: &[f64]) -> Result<VaeOutput> {
    check_len(h_g, p.config.readout_dim())?;
    check_len(noise, p.config.latent_dim)?;
    let mut ctx = Ctx::new(p);
    let hg = row_leaf(&mut ctx, h_g);
    let noise = row_leaf(&mut ctx, noise);
    let (z, mu, logvar) = head(&mut ctx, hg, noise)?;
    Ok(VaeOutput {
        mu: ctx.g.value(mu).data().to_vec(),
        logvar: ctx.g.value(logvar).data().to_vec(),
        z: ctx.g.value(z).data().to_vec(),
    })
}

/// One initial hidden state per GRU layer, from the adapter map.
pub(crate) fn initial_hidden(ctx: &mut Ctx, z: Var) -> Result<Vec<Var>> {
    let l = ctx.layout();
    let (w, b) = (ctx.var(l.adapter_w), ctx.var(l.adapter_b));
    let all = ctx.g.linear(z, w, Some(b))?;
    let h = ctx.params.config.gru_hidden;
    (0..ctx.params.config.gru_layers)
        .map(|i| Ok(ctx.g.slice_cols(all, i * h, h)?))
        .collect()
}

pub fn init_decoder_state(z: &[f64], p: &ModelParams) -> Result<Vec<Vec<f64>>> {
    check_len(z, p.config.latent_dim)?;
    let mut ctx = Ctx::new(p);
    let zv = row_leaf(&mut ctx, z);
    let hs = initial_hidden(&mut ctx, zv)?;
    Ok(hs.iter().map(|&v| ctx.g.value(v).data().to_vec()).collect())
}

/// Advances the GRU stack by one token per row; returns the new hidden
/// states and the output logits `[rows, n_rules + 1]`.
pub(crate) fn step(
    ctx: &mut Ctx,
    tokens: &[usize],
    hidden: &[Var],
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Vec<Var>, Var)> {
    let l = ctx.layout();
    let table = ctx.var(l.rule_emb);
    let mut x = ctx.g.embedding(table, tokens)?;
    let mut next = Vec::with_capacity(hidden.len());
    let p = ctx.params.config.dropout;
    let mut rng = dropout_rng;
    for (i, layer) in l.gru.iter().enumerate() {
        let vars = GruVars {
            w_input: ctx.var(layer.w_input),
            w_hidden: ctx.var(layer.w_hidden),
            b_input: ctx.var(layer.b_input),
            b_hidden: ctx.var(layer.b_hidden),
        };
        let h = gru_cell(&mut ctx.g, x, hidden[i], &vars)?;
        next.push(h);
        x = h;
        let between_layers = i + 1 < l.gru.len();
        if let (true, Some(r)) = (between_layers && p > 0.0, rng.as_deref_mut()) {
            let mask = dropout_mask(r, ctx.g.value(x).len(), p);
            x = ctx.g.dropout(x, mask)?;
        }
    }
    let (w, b) = (ctx.var(l.out_w), ctx.var(l.out_b));
    let logits = ctx.g.linear(x, w, Some(b))?;
    Ok((next, logits))
}

/// Summed masked cross-entropy of a teacher-forced batch, plus the number
/// of steps whose argmax equals the target.
pub(crate) fn teacher_forced_ce(
    ctx: &mut Ctx,
    h0: Vec<Var>,
    targets: &[&TargetSteps],
    mode: Mode,
) -> Result<(Option<Var>, usize, usize)> {
    let mut rng = match mode {
        Mode::Train { seed, step } => Some(keyed_rng(seed, streams::DECODER_DROPOUT, step)),
        Mode::Eval => None,
    };
    let max_t = targets.iter().map(|t| t.targets.len()).max().unwrap_or(0);
    let mut hidden = h0;
    let mut total: Option<Var> = None;
    let (mut correct, mut count) = (0, 0);
    let n_classes = ctx.params.config.n_rules + 1;
    for t in 0..max_t {
        // finished rows keep stepping on padding; their outputs are dropped
        let tokens: Vec<usize> = targets
            .iter()
            .map(|s| s.inputs.get(t).copied().unwrap_or(ctx.params.config.bos()))
            .collect();
        let (next, logits) = step(ctx, &tokens, &hidden, rng.as_mut())?;
        hidden = next;
        let rows: Vec<usize> = (0..targets.len())
            .filter(|&b| t < targets[b].targets.len())
            .collect();
        let picked = ctx.g.gather_rows(logits, &rows)?;
        let mut mask = Vec::with_capacity(rows.len() * n_classes);
        let mut tgt = Vec::with_capacity(rows.len());
        for &b in &rows {
            mask.extend_from_slice(&targets[b].masks[t]);
            tgt.push(targets[b].targets[t]);
        }
        let values = ctx.g.value(picked);
        for (r, &target) in tgt.iter().enumerate() {
            let row = values.row(r);
            let m = &mask[r * n_classes..(r + 1) * n_classes];
            if masked_argmax(row, m) == Some(target) {
                correct += 1;
            }
        }
        count += rows.len();
        let ce = ctx.g.masked_softmax_cross_entropy(picked, &mask, &tgt)?;
        total = Some(match total {
            None => ce,
            Some(acc) => ctx.g.add(acc, ce)?,
        });
    }
    Ok((total, correct, count))
}

fn masked_argmax(row: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in row.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|b| v > row[b]) {
            best = Some(i);
        }
    }
    best
}

/// Per-step logits and masks of a teacher-forced pass (eval mode).
#[derive(Debug, Clone)]
pub struct TeacherForced {
    pub logits: Vec<Vec<f64>>,
    pub masks: Vec<Vec<bool>>,
    pub targets: Vec<usize>,
}

pub fn decode_teacher_forced(
    z: &[f64],
    target: &RuleSequence,
    g: &Grammar,
    p: &ModelParams,
) -> Result<TeacherForced> {
    check_len(z, p.config.latent_dim)?;
    let steps = target_steps(target, g, 0)?;
    let mut ctx = Ctx::new(p);
    let zv = row_leaf(&mut ctx, z);
    let mut hidden = initial_hidden(&mut ctx, zv)?;
    let mut logits = Vec::with_capacity(steps.targets.len());
    for &token in &steps.inputs {
        let (next, out) = step(&mut ctx, &[token], &hidden, None)?;
        hidden = next;
        logits.push(ctx.g.value(out).data().to_vec());
    }
    Ok(TeacherForced {
        logits,
        masks: steps.masks,
        targets: steps.targets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Sample { temperature: f64 },
}

#[derive(Debug, Clone)]
pub enum DecodeOutcome {
    Complete {
        molecule: Molecule,
        rules: Vec<usize>,
    },
    /// No completion fits in the remaining budget; the partial derivation
    /// is returned instead of a molecule.
    Truncated {
        state: DerivationState,
        rules: Vec<usize>,
    },
}

impl DecodeOutcome {
    pub fn molecule(&self) -> Option<&Molecule> {
        match self {
            DecodeOutcome::Complete { molecule, .. } => Some(molecule),
            DecodeOutcome::Truncated { .. } => None,
        }
    }
}

pub fn decode_generate(
    z: &[f64],
    g: &Grammar,
    p: &ModelParams,
    mode: DecodeMode,
    max_len: usize,
    seed: u64,
) -> Result<DecodeOutcome> {
    Ok(
        decode_generate_batch(&[z.to_vec()], g, p, mode, max_len, seed)?
            .pop()
            .expect("one row"),
    )
}

/// Grammar-constrained generation. At every step the choice is restricted
/// to rules that match the leftmost nonterminal and still leave a
/// completion within `max_len` applications; END is allowed only once the
/// derivation is complete.
pub fn decode_generate_batch(
    zs: &[Vec<f64>],
    g: &Grammar,
    p: &ModelParams,
    mode: DecodeMode,
    max_len: usize,
    seed: u64,
) -> Result<Vec<DecodeOutcome>> {
    if max_len == 0 {
        return Err(ModelError::ZeroMaxLen);
    }
    if g.len() != p.config.n_rules {
        return Err(ModelError::ShapeMismatch {
            expected: p.config.n_rules,
            got: g.len(),
        });
    }
    for z in zs {
        check_len(z, p.config.latent_dim)?;
    }
    let n = zs.len();
    let hsize = p.config.gru_hidden;
    let mut states: Vec<DerivationState> = vec![DerivationState::initial(); n];
    let mut rules: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut outcome: Vec<Option<DecodeOutcome>> = vec![None; n];
    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| keyed_rng(seed, streams::SAMPLE, i as u64))
        .collect();

    let mut hidden: Vec<Tensor> = {
        let mut ctx = Ctx::new(p);
        let data: Vec<f64> = zs.iter().flatten().copied().collect();
        let zv = ctx
            .g
            .leaf(Tensor::from_vec(vec![n, p.config.latent_dim], data)?);
        let hs = initial_hidden(&mut ctx, zv)?;
        hs.iter().map(|&v| ctx.g.value(v).clone()).collect()
    };
    let mut active: Vec<usize> = (0..n).collect();
    let mut tokens: Vec<usize> = vec![p.config.bos(); n];

    for t in 0..=max_len {
        if active.is_empty() {
            break;
        }
        let mut ctx = Ctx::new(p);
        let hv: Vec<Var> = hidden.iter().map(|h| ctx.g.leaf(h.clone())).collect();
        let (next, logits) = step(&mut ctx, &tokens, &hv, None)?;
        let logits = ctx.g.value(logits).clone();
        let next: Vec<Tensor> = next.iter().map(|&v| ctx.g.value(v).clone()).collect();

        let mut keep = Vec::with_capacity(active.len());
        let mut next_tokens = Vec::with_capacity(active.len());
        for (r, &row) in active.iter().enumerate() {
            let state = &states[row];
            if state.is_complete() {
                let molecule = finish(state)?;
                outcome[row] = Some(DecodeOutcome::Complete {
                    molecule,
                    rules: std::mem::take(&mut rules[row]),
                });
                continue;
            }
            let mask = g.completion_mask(state, max_len - t);
            let choice = choose(logits.row(r), &mask, mode, &mut rngs[row]);
            let Some(rule) = choice else {
                outcome[row] = Some(DecodeOutcome::Truncated {
                    state: state.clone(),
                    rules: std::mem::take(&mut rules[row]),
                });
                continue;
            };
            assert!(mask[rule], "masked rule selected");
            states[row].apply(g.rule(rule)?)?;
            rules[row].push(rule);
            keep.push(r);
            next_tokens.push(rule);
        }
        active = keep.iter().map(|&r| active[r]).collect();
        hidden = next
            .iter()
            .map(|h| {
                let data: Vec<f64> = keep
                    .iter()
                    .flat_map(|&r| h.row(r).iter().copied())
                    .collect();
                Tensor::from_vec(vec![keep.len(), hsize], data).expect("hidden rows")
            })
            .collect();
        tokens = next_tokens;
    }
    for row in active {
        // budget exhausted with rules still pending cannot happen under the
        // completion mask, but report rather than assume
        outcome[row] = Some(if states[row].is_complete() {
            DecodeOutcome::Complete {
                molecule: finish(&states[row])?,
                rules: std::mem::take(&mut rules[row]),
            }
        } else {
            DecodeOutcome::Truncated {
                state: states[row].clone(),
                rules: std::mem::take(&mut rules[row]),
            }
        });
    }
    Ok(outcome
        .into_iter()
        .map(|o| o.expect("every row resolved"))
        .collect())
}

/// Picks a rule among the allowed entries of `mask` (END is never allowed
/// here: the caller finishes complete derivations itself).
fn choose(logits: &[f64], mask: &[bool], mode: DecodeMode, rng: &mut ChaCha8Rng) -> Option<usize> {
    let allowed: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if allowed.is_empty() {
        return None;
    }
    match mode {
        DecodeMode::Greedy => masked_argmax(&logits[..mask.len()], mask),
        DecodeMode::Sample { temperature } => {
            let t = temperature.max(1e-6);
            let top = allowed
                .iter()
                .map(|&i| logits[i] / t)
                .fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = allowed
                .iter()
                .map(|&i| (logits[i] / t - top).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (k, w) in weights.iter().enumerate() {
                if u < *w {
                    return Some(allowed[k]);
                }
                u -= w;
            }
            allowed.last().copied()
        }
    }
}
