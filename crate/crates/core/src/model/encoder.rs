use mhg_autodiff::rng::{dropout_mask, keyed_rng};
use mhg_autodiff::{BatchNormMode, Var};

use super::{streams, Ctx, Mode, ModelError, ModelParams, Result};
use crate::molgraph::{featurize, Molecule, NUM_ATOM_FEATURES, NUM_BOND_FEATURES};

/// Disjoint union of featurized molecules.
#[derive(Debug, Clone)]
pub(crate) struct GraphBatch {
    /// Per feature, the category index of every node.
    atom_idx: Vec<Vec<usize>>,
    /// Per feature, the category index of every directed edge.
    bond_idx: Vec<Vec<usize>>,
    src: Vec<usize>,
    dst: Vec<usize>,
    node_graph: Vec<usize>,
    n_graphs: usize,
}

impl GraphBatch {
    pub fn new(mols: &[&Molecule]) -> Result<Self> {
        let mut b = GraphBatch {
            atom_idx: vec![Vec::new(); NUM_ATOM_FEATURES],
            bond_idx: vec![Vec::new(); NUM_BOND_FEATURES],
            src: Vec::new(),
            dst: Vec::new(),
            node_graph: Vec::new(),
            n_graphs: mols.len(),
        };
        for (gi, m) in mols.iter().enumerate() {
            let f = featurize(m).map_err(|source| ModelError::Feature { index: gi, source })?;
            let offset = b.node_graph.len();
            for row in &f.atom_features {
                for (k, &v) in row.iter().enumerate() {
                    b.atom_idx[k].push(v);
                }
                b.node_graph.push(gi);
            }
            for (bond, row) in m.bonds().iter().zip(&f.bond_features) {
                for (s, d) in [(bond.a, bond.b), (bond.b, bond.a)] {
                    b.src.push(offset + s);
                    b.dst.push(offset + d);
                    for (k, &v) in row.iter().enumerate() {
                        b.bond_idx[k].push(v);
                    }
                }
            }
        }
        Ok(b)
    }

    pub fn n_nodes(&self) -> usize {
        self.node_graph.len()
    }
}

/// Batch statistics observed by each layer's batch norm in training.
pub(crate) type LayerStats = Vec<Option<(Vec<f64>, Vec<f64>)>>;

/// Message passing followed by the concatenated per-depth sum readout.
pub(crate) fn encode(ctx: &mut Ctx, batch: &GraphBatch, mode: Mode) -> Result<(Var, LayerStats)> {
    let layout = ctx.layout();
    let n = batch.n_nodes();
    let mut h = None;
    for (k, idx) in batch.atom_idx.iter().enumerate() {
        let table = ctx.var(layout.atom_emb[k]);
        let e = ctx.g.embedding(table, idx)?;
        h = Some(match h {
            None => e,
            Some(acc) => ctx.g.add(acc, e)?,
        });
    }
    let mut h = h.expect("nine atom features");
    let edge = if batch.src.is_empty() {
        None
    } else {
        let mut e = None;
        for (k, idx) in batch.bond_idx.iter().enumerate() {
            let table = ctx.var(layout.bond_emb[k]);
            let v = ctx.g.embedding(table, idx)?;
            e = Some(match e {
                None => v,
                Some(acc) => ctx.g.add(acc, v)?,
            });
        }
        e
    };

    let mut rng = match mode {
        Mode::Train { seed, step } => Some(keyed_rng(seed, streams::ENCODER_DROPOUT, step)),
        Mode::Eval => None,
    };
    let mut readout = vec![ctx
        .g
        .scatter_add_rows(h, &batch.node_graph, batch.n_graphs)?];
    let mut stats = Vec::with_capacity(layout.gin.len());
    for (k, layer) in layout.gin.iter().enumerate() {
        let eps = ctx.var(layer.eps);
        let scaled = ctx.g.scale_by(h, eps)?;
        let mut pre = ctx.g.add(h, scaled)?;
        if let Some(e) = edge {
            let hj = ctx.g.gather_rows(h, &batch.src)?;
            let msg = ctx.g.add(hj, e)?;
            let msg = ctx.g.relu(msg);
            let agg = ctx.g.scatter_add_rows(msg, &batch.dst, n)?;
            pre = ctx.g.add(pre, agg)?;
        }
        let (w1, b1) = (ctx.var(layer.lin1_w), ctx.var(layer.lin1_b));
        let x = ctx.g.linear(pre, w1, Some(b1))?;
        let (gamma, beta) = (ctx.var(layer.bn_gamma), ctx.var(layer.bn_beta));
        // a single node row has no batch variance; fall back to running stats
        let train_bn = matches!(mode, Mode::Train { .. }) && n >= 2;
        let bn_mode = if train_bn {
            BatchNormMode::Train
        } else {
            let running = &ctx.params.running[k];
            BatchNormMode::Eval {
                mean: running.mean.clone(),
                var: running.var.clone(),
            }
        };
        let x = ctx.g.batch_norm(x, gamma, beta, bn_mode)?;
        stats.push(if train_bn {
            ctx.g.batch_norm_stats(x)
        } else {
            None
        });
        let x = ctx.g.relu(x);
        let (w2, b2) = (ctx.var(layer.lin2_w), ctx.var(layer.lin2_b));
        let mut x = ctx.g.linear(x, w2, Some(b2))?;
        if let Some(rng) = rng.as_mut() {
            let p = ctx.params.config.dropout;
            if p > 0.0 {
                let mask = dropout_mask(rng, ctx.g.value(x).len(), p);
                x = ctx.g.dropout(x, mask)?;
            }
        }
        h = x;
        readout.push(
            ctx.g
                .scatter_add_rows(h, &batch.node_graph, batch.n_graphs)?,
        );
    }
    Ok((ctx.g.concat_cols(&readout)?, stats))
}

/// Readout `h_G` of one molecule, eval mode.
pub fn gin_encode(m: &Molecule, p: &ModelParams) -> Result<Vec<f64>> {
    Ok(gin_encode_batch(&[m], p)?.pop().expect("one row"))
}

/// Readouts of several molecules, eval mode; rows do not depend on batching.
pub fn gin_encode_batch(mols: &[&Molecule], p: &ModelParams) -> Result<Vec<Vec<f64>>> {
    if mols.is_empty() {
        return Ok(Vec::new());
    }
    let batch = GraphBatch::new(mols)?;
    let mut ctx = Ctx::new(p);
    let (hg, _) = encode(&mut ctx, &batch, Mode::Eval)?;
    let t = ctx.g.value(hg);
    Ok((0..t.rows()).map(|r| t.row(r).to_vec()).collect())
}
