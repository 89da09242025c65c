use mhg_autodiff::rng::{keyed_rng, standard_normal};
use mhg_autodiff::{Tensor, Var};

use super::decoder::{head, initial_hidden, teacher_forced_ce};
use super::encoder::{encode, GraphBatch, LayerStats};
use super::{streams, Ctx, Mode, ModelError, ModelParams, Result, RunningStats, BN_MOMENTUM};
use crate::grammar::{applicable_rules, Grammar, RuleSequence};
use crate::molgraph::Molecule;

/// Decoder inputs, targets and masks for one sequence: `len + 1` steps,
/// the last of which targets END.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSteps {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    /// `n_rules + 1` entries per step; the last is END.
    pub masks: Vec<Vec<bool>>,
}

pub fn target_steps(seq: &RuleSequence, g: &Grammar, index: usize) -> Result<TargetSteps> {
    let invalid = |reason: String| ModelError::InvalidTarget { index, reason };
    let states = seq.replay(g).map_err(|e| invalid(e.to_string()))?;
    if !states.last().expect("initial state").is_complete() {
        return Err(invalid("derivation is incomplete".into()));
    }
    let end = g.len();
    let mut inputs = vec![end];
    inputs.extend_from_slice(seq.ids());
    let mut targets = seq.ids().to_vec();
    targets.push(end);
    let masks = states
        .iter()
        .map(|s| {
            let mut m = applicable_rules(s, g);
            m.push(s.is_complete());
            m
        })
        .collect();
    Ok(TargetSteps {
        inputs,
        targets,
        masks,
    })
}

/// Batch-mean loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    /// Teacher-forced steps whose masked argmax equals the target.
    pub correct: usize,
    pub steps: usize,
}

impl LossBreakdown {
    pub fn accuracy(&self) -> f64 {
        if self.steps == 0 {
            return 0.0;
        }
        self.correct as f64 / self.steps as f64
    }
}

pub(crate) struct Forward {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub stats: LayerStats,
    pub n_nodes: usize,
}

/// `(Σ CE + β Σ KL) / B`. In training mode the reparameterization noise
/// is keyed by `(seed, step)`; in eval mode `z = μ`.
pub(crate) fn forward(
    ctx: &mut Ctx,
    batch: &[(&Molecule, &RuleSequence)],
    g: &Grammar,
    beta: f64,
    mode: Mode,
) -> Result<Forward> {
    if batch.is_empty() {
        return Err(ModelError::ShapeMismatch {
            expected: 1,
            got: 0,
        });
    }
    if g.len() != ctx.params.config.n_rules {
        return Err(ModelError::ShapeMismatch {
            expected: ctx.params.config.n_rules,
            got: g.len(),
        });
    }
    let steps = batch
        .iter()
        .enumerate()
        .map(|(i, (_, s))| target_steps(s, g, i))
        .collect::<Result<Vec<_>>>()?;
    let mols: Vec<&Molecule> = batch.iter().map(|(m, _)| *m).collect();
    let graphs = GraphBatch::new(&mols)?;
    let (hg, stats) = encode(ctx, &graphs, mode)?;
    let shape = [batch.len(), ctx.params.config.latent_dim];
    let noise = match mode {
        Mode::Train { seed, step } => {
            standard_normal(&mut keyed_rng(seed, streams::REPARAM, step), &shape)
        }
        Mode::Eval => Tensor::zeros(&shape),
    };
    let noise = ctx.g.leaf(noise);
    let (z, mu, logvar) = head(ctx, hg, noise)?;
    let h0 = initial_hidden(ctx, z)?;
    let refs: Vec<&TargetSteps> = steps.iter().collect();
    let (ce, correct, count) = teacher_forced_ce(ctx, h0, &refs, mode)?;
    let ce = ce.expect("every sequence has an END step");
    let kl = ctx.g.gaussian_kl(mu, logvar)?;
    let weighted = ctx.g.mul_const(kl, beta);
    let sum = ctx.g.add(ce, weighted)?;
    let b = batch.len() as f64;
    let total = ctx.g.mul_const(sum, 1.0 / b);
    let breakdown = LossBreakdown {
        total: ctx.g.value(total).item(),
        reconstruction: ctx.g.value(ce).item() / b,
        kl: ctx.g.value(kl).item() / b,
        correct,
        steps: count,
    };
    Ok(Forward {
        total,
        breakdown,
        stats,
        n_nodes: graphs.n_nodes(),
    })
}

/// Loss of a batch of molecules paired with their rule sequences.
pub fn loss(
    batch: &[(&Molecule, &RuleSequence)],
    g: &Grammar,
    p: &ModelParams,
    beta: f64,
    mode: Mode,
) -> Result<LossBreakdown> {
    let mut ctx = Ctx::new(p);
    Ok(forward(&mut ctx, batch, g, beta, mode)?.breakdown)
}

/// Loss plus its gradient with respect to every parameter tensor, in
/// [`ModelParams::tensors`] order.
pub fn loss_and_gradients(
    batch: &[(&Molecule, &RuleSequence)],
    g: &Grammar,
    p: &ModelParams,
    beta: f64,
    mode: Mode,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let mut ctx = Ctx::new(p);
    let f = forward(&mut ctx, batch, g, beta, mode)?;
    let grads = ctx.gradients(f.total)?;
    Ok((f.breakdown, grads))
}

/// Exponential moving average with unbiased batch variance.
pub(crate) fn update_running_stats(running: &mut [RunningStats], stats: &LayerStats, n: usize) {
    if n < 2 {
        return;
    }
    let correction = n as f64 / (n - 1) as f64;
    for (r, s) in running.iter_mut().zip(stats) {
        let Some((mean, var)) = s else { continue };
        for (rm, m) in r.mean.iter_mut().zip(mean) {
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * m;
        }
        for (rv, v) in r.var.iter_mut().zip(var) {
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * v * correction;
        }
    }
}
