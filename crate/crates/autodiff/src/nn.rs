//! Composite layers built from the primitive ops.

use crate::{Graph, Result, Var};

/// Parameters of one GRU cell, already bound to a graph.
///
/// Gate blocks are stacked along columns in the order reset, update, new:
/// `w_input: [in, 3h]`, `w_hidden: [h, 3h]`, biases `[3h]`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_input: Var,
    pub w_hidden: Var,
    pub b_input: Var,
    pub b_hidden: Var,
}

/// One GRU step: returns the next hidden state `[batch, h]`.
///
/// ```text
/// r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
/// u  = sigmoid(x W_iu + b_iu + h W_hu + b_hu)
/// n  = tanh(x W_in + b_in + r * (h W_hn + b_hn))
/// h' = n + u * (h - n)
/// ```
pub fn gru_cell(g: &mut Graph, x: Var, h: Var, p: &GruVars) -> Result<Var> {
    let hidden = g.value(h).cols();
    let gi = g.linear(x, p.w_input, Some(p.b_input))?;
    let gh = g.linear(h, p.w_hidden, Some(p.b_hidden))?;
    let i_r = g.slice_cols(gi, 0, hidden)?;
    let i_u = g.slice_cols(gi, hidden, hidden)?;
    let i_n = g.slice_cols(gi, 2 * hidden, hidden)?;
    let h_r = g.slice_cols(gh, 0, hidden)?;
    let h_u = g.slice_cols(gh, hidden, hidden)?;
    let h_n = g.slice_cols(gh, 2 * hidden, hidden)?;
    let r = g.add(i_r, h_r)?;
    let r = g.sigmoid(r);
    let u = g.add(i_u, h_u)?;
    let u = g.sigmoid(u);
    let rn = g.mul(r, h_n)?;
    let n = g.add(i_n, rn)?;
    let n = g.tanh(n);
    let diff = g.sub(h, n)?;
    let gated = g.mul(u, diff)?;
    g.add(n, gated)
}
