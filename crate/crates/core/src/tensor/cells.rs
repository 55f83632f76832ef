//! Recurrent cells built from tape primitives, so their gradients come for
//! free from the engine.

use crate::error::Result;
use crate::tensor::{Graph, Var};

/// Weights of a gated recurrent unit with input dim `d_in` and hidden dim `k`.
///
/// `w*` are `d_in × k`, `u*` are `k × k`, `b*` have length `k`.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub wz: Var,
    pub uz: Var,
    pub bz: Var,
    pub wr: Var,
    pub ur: Var,
    pub br: Var,
    pub wh: Var,
    pub uh: Var,
    pub bh: Var,
}

fn gate(g: &mut Graph, x: Var, h: Var, w: Var, u: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    let hu = g.matmul(h, u)?;
    let s = g.add(xw, hu)?;
    g.add_bias(s, b)
}

/// One GRU step:
///
/// ```text
/// z  = σ(x Wz + h Uz + bz)
/// r  = σ(x Wr + h Ur + br)
/// h̃  = tanh(x Wh + (r ∘ h) Uh + bh)
/// h' = (1 − z) ∘ h + z ∘ h̃
/// ```
pub fn gru_cell(g: &mut Graph, x: Var, h: Var, p: &GruParams) -> Result<Var> {
    let z_pre = gate(g, x, h, p.wz, p.uz, p.bz)?;
    let z = g.sigmoid(z_pre)?;
    let r_pre = gate(g, x, h, p.wr, p.ur, p.br)?;
    let r = g.sigmoid(r_pre)?;
    let rh = g.mul(r, h)?;
    let cand_pre = gate(g, x, rh, p.wh, p.uh, p.bh)?;
    let cand = g.tanh(cand_pre)?;
    // h + z ∘ (h̃ − h)
    let delta = g.sub(cand, h)?;
    let step = g.mul(z, delta)?;
    g.add(h, step)
}

/// Weights of an LSTM cell, laid out like [`GruParams`].
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub wi: Var,
    pub ui: Var,
    pub bi: Var,
    pub wf: Var,
    pub uf: Var,
    pub bf: Var,
    pub wo: Var,
    pub uo: Var,
    pub bo: Var,
    pub wc: Var,
    pub uc: Var,
    pub bc: Var,
}

/// One LSTM step; returns `(h', c')`.
pub fn lstm_cell(g: &mut Graph, x: Var, h: Var, c: Var, p: &LstmParams) -> Result<(Var, Var)> {
    let i_pre = gate(g, x, h, p.wi, p.ui, p.bi)?;
    let i = g.sigmoid(i_pre)?;
    let f_pre = gate(g, x, h, p.wf, p.uf, p.bf)?;
    let f = g.sigmoid(f_pre)?;
    let o_pre = gate(g, x, h, p.wo, p.uo, p.bo)?;
    let o = g.sigmoid(o_pre)?;
    let c_pre = gate(g, x, h, p.wc, p.uc, p.bc)?;
    let cand = g.tanh(c_pre)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next)?;
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}
