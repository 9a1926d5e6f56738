//! Interaction operators shared by the backbones, on the tape and as plain
//! reference functions.

use crate::error::{Error, Result};
use crate::nn::{Graph, Mlp, Var};

/// Pairwise field interactions `Σ_{i<j} ⟨v_i, v_j⟩` via the square-of-sum
/// identity.
pub fn fm_second_order(fields: &[Vec<f64>]) -> Result<f64> {
    if fields.len() < 2 {
        return Err(Error::Contract(format!(
            "FM needs at least 2 fields, got {}",
            fields.len()
        )));
    }
    let d = fields[0].len();
    if let Some(bad) = fields.iter().find(|v| v.len() != d) {
        return Err(Error::shape("fm_second_order", &[d], &[bad.len()]));
    }
    let mut total = 0.0;
    for k in 0..d {
        let sum: f64 = fields.iter().map(|v| v[k]).sum();
        let sq: f64 = fields.iter().map(|v| v[k] * v[k]).sum();
        total += sum * sum - sq;
    }
    Ok(0.5 * total)
}

/// `x0 ⊙ (W x_l + b) + x_l` with `W` row-major `[n, n]`.
pub fn cross_layer(x0: &[f64], xl: &[f64], w: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = x0.len();
    if xl.len() != n || b.len() != n || w.len() != n * n {
        return Err(Error::shape("cross_layer", &[n, n], &[xl.len(), b.len(), w.len()]));
    }
    Ok((0..n)
        .map(|i| {
            let wx: f64 = (0..n).map(|j| w[i * n + j] * xl[j]).sum();
            x0[i] * (wx + b[i]) + xl[i]
        })
        .collect())
}

/// FM second-order term on the tape: `e: [B, n, d]` to `[B, 1]`.
pub(crate) fn fm_graph(g: &mut Graph, e: Var) -> Result<Var> {
    let shape = g.shape(e).to_vec();
    if shape.len() != 3 || shape[1] < 2 {
        return Err(Error::Contract(format!("FM needs [B, n>=2, d], got {shape:?}")));
    }
    let b = shape[0];
    let sum = g.sum_axis(e, 1)?;
    let sum_sq = g.mul(sum, sum)?;
    let sq = g.mul(e, e)?;
    let sq_sum = g.sum_axis(sq, 1)?;
    let diff = g.sub(sum_sq, sq_sum)?;
    let per_row = g.sum_axis(diff, 1)?;
    let half = g.scale(per_row, 0.5);
    g.reshape(half, &[b, 1])
}

/// One full-matrix cross layer on the tape. `x0, xl: [B, n]`. The weight
/// is stored `[in, out]` like [`crate::nn::Linear`], i.e. as `Wᵀ`.
pub(crate) fn cross_graph(g: &mut Graph, x0: Var, xl: Var, w_t: Var, b: Var) -> Result<Var> {
    let lin = g.affine(xl, w_t, b)?;
    let gated = g.mul(x0, lin)?;
    g.add(gated, xl)
}

/// Weighted sum of history rows. `scores: [B, L]` are normalized by a
/// softmax over the valid positions given by `mask` (1 valid, 0 padding);
/// rows with no valid position pool to zero. `hist: [B*L, d]`.
pub(crate) fn attention_pool(g: &mut Graph, scores: Var, hist: Var, mask: &[f64]) -> Result<Var> {
    let (b, l) = {
        let s = g.shape(scores);
        (s[0], s[1])
    };
    let d = g.shape(hist)[1];
    if mask.len() != b * l || g.shape(hist)[0] != b * l {
        return Err(Error::shape("attention_pool", &[b, l], g.shape(hist)));
    }
    let neg = crate::nn::Tensor::new(
        vec![b, l],
        mask.iter().map(|&m| if m > 0.0 { 0.0 } else { -1e30 }).collect(),
    )?;
    let neg = g.constant(neg);
    let masked = g.add(scores, neg)?;
    let soft = g.softmax(masked, 1)?;
    let keep = g.constant(crate::nn::Tensor::new(vec![b, l], mask.to_vec())?);
    let weights = g.mul(soft, keep)?;
    weights_pool(g, weights, hist, b, l, d)
}

/// Mean of the valid history rows; zero for empty histories.
pub(crate) fn mean_pool(g: &mut Graph, hist: Var, mask: &[f64], b: usize, l: usize) -> Result<Var> {
    let d = g.shape(hist)[1];
    let mut w = mask.to_vec();
    for row in w.chunks_mut(l.max(1)) {
        let n: f64 = row.iter().sum();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    let weights = g.constant(crate::nn::Tensor::new(vec![b, l], w)?);
    weights_pool(g, weights, hist, b, l, d)
}

fn weights_pool(g: &mut Graph, weights: Var, hist: Var, b: usize, l: usize, d: usize) -> Result<Var> {
    let flat_w = g.reshape(weights, &[b * l])?;
    let scaled = g.scale_rows(hist, flat_w)?;
    let cube = g.reshape(scaled, &[b, l, d])?;
    g.sum_axis(cube, 1)
}

/// DIN local activation: scores each history row against the target with
/// `mlp([h, t, h-t, h⊙t])` and pools with [`attention_pool`].
/// `target: [B, d]`, `hist: [B*L, d]`.
pub(crate) fn din_attention(
    g: &mut Graph,
    mlp: &Mlp,
    target: Var,
    hist: Var,
    mask: &[f64],
    l: usize,
) -> Result<Var> {
    let (b, d) = {
        let s = g.shape(target);
        (s[0], s[1])
    };
    if g.shape(hist) != [b * l, d] {
        return Err(Error::shape("din_attention", &[b * l, d], g.shape(hist)));
    }
    let rep: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, l)).collect();
    let t = g.gather(target, &rep)?;
    let diff = g.sub(hist, t)?;
    let prod = g.mul(hist, t)?;
    let feats = g.concat(&[hist, t, diff, prod], 1)?;
    let scores = mlp.forward(g, feats)?;
    let scores = g.reshape(scores, &[b, l])?;
    attention_pool(g, scores, hist, mask)
}
