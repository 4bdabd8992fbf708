use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParameterStore};
use super::tensor::{Real, Tensor};
use super::{Init, NumericsError};

/// Parameters of one LSTM direction in one layer.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LstmLayerIds {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

impl LstmLayerIds {
    pub fn register<F: Real, R: Rng>(
        store: &mut ParameterStore<F>,
        prefix: &str,
        input: usize,
        hidden: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        let r = init.weight_range(hidden);
        Ok(Self {
            wx: store.add_uniform(&format!("{prefix}.wx"), input, 4 * hidden, r, rng)?,
            wh: store.add_uniform(&format!("{prefix}.wh"), hidden, 4 * hidden, r, rng)?,
            b: store.add_zeros(&format!("{prefix}.b"), 1, 4 * hidden)?,
        })
    }

    pub fn step<F: Real>(&self, g: &mut Graph<'_, F>, x: Var, h: Var, c: Var) -> (Var, Var) {
        let (wx, wh, b) = (g.param(self.wx), g.param(self.wh), g.param(self.b));
        g.lstm_cell(x, h, c, wx, wh, b)
    }
}

/// A stacked bidirectional LSTM whose two direction states are concatenated
/// and projected back to `hidden` dimensions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BiLstmIds {
    pub layers: Vec<[LstmLayerIds; 2]>,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub hidden: usize,
}

impl BiLstmIds {
    pub fn register<F: Real, R: Rng>(
        store: &mut ParameterStore<F>,
        prefix: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        let mut ids = Vec::with_capacity(layers);
        for l in 0..layers {
            let in_dim = if l == 0 { input } else { 2 * hidden };
            ids.push([
                LstmLayerIds::register(store, &format!("{prefix}.l{l}.fwd"), in_dim, hidden, init, rng)?,
                LstmLayerIds::register(store, &format!("{prefix}.l{l}.bwd"), in_dim, hidden, init, rng)?,
            ]);
        }
        Ok(Self {
            layers: ids,
            proj_w: store.add_uniform(&format!("{prefix}.proj.w"), 2 * hidden, hidden, init.weight_range(2 * hidden), rng)?,
            proj_b: store.add_zeros(&format!("{prefix}.proj.b"), 1, hidden)?,
            hidden,
        })
    }
}

/// Result of [`bilstm_encode`] on a batch of sequences.
pub struct BiLstmOutput {
    /// Per-step embeddings of every sequence, stacked: rows
    /// `offsets[b]..offsets[b] + lengths[b]` belong to sequence `b`.
    pub steps: Option<Var>,
    /// One embedding per sequence (`B×hidden`).
    pub finals: Var,
    pub offsets: Vec<usize>,
    pub lengths: Vec<usize>,
}

/// Runs a stacked biLSTM over a padded batch.
///
/// `inputs[t]` holds the step-`t` inputs for the whole batch (`B×in`);
/// sequence `b` only uses its first `lengths[b]` steps. Padded steps leave
/// the recurrent state untouched, so the forward direction ends on the last
/// real token and the backward direction starts on it.
pub fn bilstm_encode<F: Real, R: Rng>(
    g: &mut Graph<'_, F>,
    ids: &BiLstmIds,
    inputs: &[Var],
    lengths: &[usize],
    dropout: f64,
    want_steps: bool,
    rng: &mut R,
) -> BiLstmOutput {
    let steps_total = inputs.len();
    let batch = lengths.len();
    let m = ids.hidden;
    assert!(steps_total >= 1, "empty sequence batch");
    assert!(lengths.iter().all(|&l| l >= 1 && l <= steps_total), "bad sequence lengths");

    let zeros = g.constant(Tensor::zeros(batch, m));
    let mut layer_in: Vec<Var> = inputs.to_vec();
    for layer in &ids.layers {
        let mut fwd = Vec::with_capacity(steps_total);
        let (mut h, mut c) = (zeros, zeros);
        for (t, &x) in layer_in.iter().enumerate() {
            (h, c) = masked_step(g, &layer[0], x, h, c, t, lengths);
            fwd.push(h);
        }
        let mut bwd = vec![zeros; steps_total];
        let (mut h, mut c) = (zeros, zeros);
        for t in (0..steps_total).rev() {
            (h, c) = masked_step(g, &layer[1], layer_in[t], h, c, t, lengths);
            bwd[t] = h;
        }
        layer_in = (0..steps_total)
            .map(|t| {
                let cat = g.concat_cols(&[fwd[t], bwd[t]]);
                g.dropout(cat, dropout, rng)
            })
            .collect();
    }

    let (pw, pb) = (g.param(ids.proj_w), g.param(ids.proj_b));
    let last = g.gather(&layer_in, lengths.iter().enumerate().map(|(b, &l)| (l - 1, b)).collect());
    let first = g.gather(&layer_in, (0..batch).map(|b| (0, b)).collect());
    let last_fwd = g.slice_cols(last, 0, m);
    let first_bwd = g.slice_cols(first, m, m);
    let fin = g.concat_cols(&[last_fwd, first_bwd]);
    let finals = g.affine(fin, pw, Some(pb));

    let mut offsets = Vec::with_capacity(batch);
    let mut picks = Vec::new();
    for (b, &l) in lengths.iter().enumerate() {
        offsets.push(picks.len());
        picks.extend((0..l).map(|t| (t, b)));
    }
    let steps = want_steps.then(|| {
        let stacked = g.gather(&layer_in, picks);
        g.affine(stacked, pw, Some(pb))
    });
    BiLstmOutput { steps, finals, offsets, lengths: lengths.to_vec() }
}

fn masked_step<F: Real>(
    g: &mut Graph<'_, F>,
    cell: &LstmLayerIds,
    x: Var,
    h: Var,
    c: Var,
    t: usize,
    lengths: &[usize],
) -> (Var, Var) {
    let (hn, cn) = cell.step(g, x, h, c);
    if lengths.iter().all(|&l| t < l) {
        return (hn, cn);
    }
    let keep: Vec<bool> = lengths.iter().map(|&l| t < l).collect();
    (g.blend_rows(hn, h, keep.clone()), g.blend_rows(cn, c, keep))
}
