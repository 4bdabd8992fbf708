//! The memory-augmented encoder/decoder and its lesioned variants.

mod trace;
mod vocab;

pub use trace::AttentionTrace;
pub use vocab::{Vocab, EOS, PAD, SOS, SPECIALS};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    bilstm_encode, BiLstmIds, BiLstmOutput, Graph, LstmLayerIds, NumericsError, ParamId, ParameterStore, Real, Tensor,
    Var, Init,
};
use crate::scan::{Instruction, Pair};

/// Longest action sequence in the canonical corpus.
pub const CORPUS_MAX_OUTPUT: usize = 48;

/// Queries decoded together during greedy evaluation.
const PREDICT_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Full,
    NoSupportLoss,
    NoDecoderAttention,
    StandardSeq2Seq,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::Full, Variant::NoSupportLoss, Variant::NoDecoderAttention, Variant::StandardSeq2Seq];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSupportLoss => "no-support-loss",
            Variant::NoDecoderAttention => "no-decoder-attention",
            Variant::StandardSeq2Seq => "standard-seq2seq",
        }
    }

    pub fn uses_memory(self) -> bool {
        self != Variant::StandardSeq2Seq
    }

    pub fn decoder_attention(self) -> bool {
        self != Variant::NoDecoderAttention
    }

    /// Whether meta-training adds the support items as extra queries.
    pub fn support_loss(self) -> bool {
        matches!(self, Variant::Full | Variant::NoDecoderAttention)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub m: usize,
    pub layers: usize,
    pub dropout: f64,
    pub variant: Variant,
    pub max_decode_len: usize,
    #[serde(default)]
    pub init: Init,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { m: 200, layers: 2, dropout: 0.5, variant: Variant::Full, max_decode_len: 60, init: Init::default() }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if self.m == 0 {
            return bad("m must be positive");
        }
        if self.layers == 0 {
            return bad("layers must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.max_decode_len <= CORPUS_MAX_OUTPUT {
            return bad("max_decode_len must exceed the longest corpus output (48)");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("episode has no support items but the model reads from memory")]
    EmptySupport,
    #[error("{side} symbol `{symbol}` is not in the model vocabulary")]
    VocabMismatch { symbol: String, side: &'static str },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelIds {
    in_emb: ParamId,
    /// Shared by the support-output encoder and the decoder input.
    out_emb: ParamId,
    f_ie: BiLstmIds,
    f_oe: Option<BiLstmIds>,
    ctx_w: ParamId,
    ctx_b: ParamId,
    dec: Vec<LstmLayerIds>,
    attn: Option<(ParamId, ParamId)>,
    out_w: ParamId,
    out_b: ParamId,
}

/// Output of [`MetaSeq2Seq::episode_loss`].
pub struct EpisodeLoss {
    /// Mean per-symbol loss over every decoded item (the training objective).
    pub loss: Var,
    /// Mean per-symbol loss over query items only.
    pub query_loss: f64,
    pub query_symbols: usize,
    pub total_symbols: usize,
}

/// A greedy decode of one query.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub output: Vec<String>,
    /// The decoder hit `max_decode_len` without emitting the end symbol.
    pub overflow: bool,
    pub trace: Option<AttentionTrace>,
}

impl Prediction {
    pub fn matches(&self, target: &[String]) -> bool {
        !self.overflow && self.output == target
    }
}

/// Encoded support set, reusable across query batches.
pub struct Memory<F> {
    keys: Tensor<F>,
    values: Tensor<F>,
    labels: Vec<String>,
}

impl<F: Real> Memory<F> {
    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows() == 0
    }

    pub fn keys(&self) -> &Tensor<F> {
        &self.keys
    }

    pub fn values(&self) -> &Tensor<F> {
        &self.values
    }
}

/// Support items in a canonical order, so memory reductions do not depend on
/// the order the episode lists them in.
fn canonical_support(support: &[Pair]) -> Vec<&Pair> {
    let mut s: Vec<&Pair> = support.iter().collect();
    s.sort_by(|a, b| (&a.instruction, &a.actions).cmp(&(&b.instruction, &b.actions)));
    s
}

/// Step-major columns of a ragged batch, padded with [`PAD`].
fn columns(seqs: &[Vec<usize>]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let lengths: Vec<usize> = seqs.iter().map(Vec::len).collect();
    let max = lengths.iter().copied().max().unwrap_or(0);
    let cols = (0..max).map(|t| seqs.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect()).collect();
    (cols, lengths)
}

fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn segment_of(out: &BiLstmOutput, i: usize) -> (usize, usize) {
    (out.offsets[i], out.lengths[i])
}

struct TeacherForward {
    logits: Var,
    targets: Vec<usize>,
    is_query: Vec<bool>,
    context: Var,
    query_segments: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct MetaSeq2Seq<F: Real> {
    config: ModelConfig,
    input_vocab: Vocab,
    output_vocab: Vocab,
    params: ParameterStore<F>,
    ids: ModelIds,
}

impl<F: Real> MetaSeq2Seq<F> {
    pub fn new(config: ModelConfig, input_vocab: Vocab, output_vocab: Vocab, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParameterStore::new(seed);
        let m = config.m;
        let init = config.init;
        let er = init.embedding_range();
        let in_emb = p.add_uniform("emb.in", input_vocab.len(), m, er, &mut rng)?;
        let out_emb = p.add_uniform("emb.out", output_vocab.len(), m, er, &mut rng)?;
        let f_ie = BiLstmIds::register(&mut p, "enc.in", m, m, config.layers, init, &mut rng)?;
        let f_oe = if config.variant.uses_memory() {
            Some(BiLstmIds::register(&mut p, "enc.out", m, m, config.layers, init, &mut rng)?)
        } else {
            None
        };
        let ctx_w = p.add_uniform("ctx.w", 2 * m, m, init.weight_range(2 * m), &mut rng)?;
        let ctx_b = p.add_zeros("ctx.b", 1, m)?;
        let dec = (0..config.layers)
            .map(|l| LstmLayerIds::register(&mut p, &format!("dec.l{l}"), m, m, init, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let attn = if config.variant.decoder_attention() {
            Some((p.add_uniform("attn.w", 2 * m, m, init.weight_range(2 * m), &mut rng)?, p.add_zeros("attn.b", 1, m)?))
        } else {
            None
        };
        let out_w = p.add_uniform("out.w", m, output_vocab.len(), init.weight_range(m), &mut rng)?;
        let out_b = p.add_zeros("out.b", 1, output_vocab.len())?;
        let ids = ModelIds { in_emb, out_emb, f_ie, f_oe, ctx_w, ctx_b, dec, attn, out_w, out_b };
        Ok(Self { config, input_vocab, output_vocab, params: p, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_vocab(&self) -> &Vocab {
        &self.input_vocab
    }

    pub fn output_vocab(&self) -> &Vocab {
        &self.output_vocab
    }

    pub fn params(&self) -> &ParameterStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore<F> {
        &mut self.params
    }

    /// Rebuilds lookup tables after deserialization.
    pub fn restore_derived(&mut self) {
        self.params.restore_derived();
    }

    /// Same model at another float precision.
    pub fn cast<G: Real>(&self) -> MetaSeq2Seq<G> {
        MetaSeq2Seq {
            config: self.config.clone(),
            input_vocab: self.input_vocab.clone(),
            output_vocab: self.output_vocab.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
        }
    }

    fn encode_inputs(&self, items: &[&Instruction]) -> Result<Vec<Vec<usize>>, ModelError> {
        items.iter().map(|i| self.input_vocab.encode_with_eos(i.tokens(), "input")).collect()
    }

    fn encode_outputs(&self, items: &[&Pair]) -> Result<Vec<Vec<usize>>, ModelError> {
        items.iter().map(|p| self.output_vocab.encode_with_eos(p.actions.actions(), "output")).collect()
    }

    fn run_encoder<R: Rng>(
        &self,
        g: &mut Graph<'_, F>,
        enc: &BiLstmIds,
        table: ParamId,
        seqs: &[Vec<usize>],
        want_steps: bool,
        rng: &mut R,
    ) -> Result<BiLstmOutput, ModelError> {
        let table = g.param(table);
        let (cols, lengths) = columns(seqs);
        let mut inputs = Vec::with_capacity(cols.len());
        for col in &cols {
            let e = g.embed(table, col)?;
            inputs.push(g.dropout(e, self.config.dropout, rng));
        }
        Ok(bilstm_encode(g, enc, &inputs, &lengths, self.config.dropout, want_steps, rng))
    }

    /// `A = softmax(QKᵀ/√m)`, `M = A·V`. Returns `(M, A)`.
    fn memory_attend(&self, g: &mut Graph<'_, F>, q: Var, k: Var, v: Var) -> (Var, Var) {
        let scores = g.matmul_bt(q, k);
        let scaled = g.scale(scores, F::one() / F::lit(self.config.m as f64).sqrt());
        let a = g.softmax_rows(scaled);
        (g.matmul(a, v), a)
    }

    /// `C = tanh(W·[Q; M] + b)`; without memory `M` is all zeros.
    fn context(&self, g: &mut Graph<'_, F>, q: Var, mem: Option<Var>) -> Var {
        let mem = match mem {
            Some(mv) => mv,
            None => {
                let rows = g.value(q).rows();
                g.constant(Tensor::zeros(rows, self.config.m))
            }
        };
        let cat = g.concat_cols(&[q, mem]);
        let (w, b) = (g.param(self.ids.ctx_w), g.param(self.ids.ctx_b));
        let pre = g.affine(cat, w, Some(b));
        g.tanh(pre)
    }

    /// Maps decoder states to output logits, attending over `c` if the
    /// variant has decoder attention. Also returns the attention node.
    fn readout(&self, g: &mut Graph<'_, F>, top: Var, c: Var, segments: Vec<(usize, usize)>) -> (Var, Option<Var>) {
        let (state, attn) = match self.ids.attn {
            Some((w, b)) => {
                let u = g.segment_attention(top, c, segments);
                let cat = g.concat_cols(&[top, u]);
                let (w, b) = (g.param(w), g.param(b));
                let pre = g.affine(cat, w, Some(b));
                (g.tanh(pre), Some(u))
            }
            None => (top, None),
        };
        let (w, b) = (g.param(self.ids.out_w), g.param(self.ids.out_b));
        (g.affine(state, w, Some(b)), attn)
    }

    /// Decoder start state: every layer's hidden state is `C_T` of the
    /// item's segment, cells start at zero.
    fn decoder_init(&self, g: &mut Graph<'_, F>, c: Var, segments: &[(usize, usize)]) -> (Vec<Var>, Vec<Var>) {
        let last = g.gather(&[c], segments.iter().map(|&(s, l)| (0, s + l - 1)).collect());
        let zeros = g.constant(Tensor::zeros(segments.len(), self.config.m));
        (vec![last; self.config.layers], vec![zeros; self.config.layers])
    }

    fn decoder_step<R: Rng>(
        &self,
        g: &mut Graph<'_, F>,
        prev: &[usize],
        hs: &mut [Var],
        cs: &mut [Var],
        rng: &mut R,
    ) -> Result<Var, ModelError> {
        let table = g.param(self.ids.out_emb);
        let e = g.embed(table, prev)?;
        let mut x = g.dropout(e, self.config.dropout, rng);
        for (l, cell) in self.ids.dec.iter().enumerate() {
            let (h, c) = cell.step(g, x, hs[l], cs[l]);
            hs[l] = h;
            cs[l] = c;
            x = g.dropout(h, self.config.dropout, rng);
        }
        Ok(x)
    }

    /// Teacher-forced decoding of `targets` (each ending in [`EOS`]).
    /// Returns stacked logits for every target symbol and, per row, the
    /// index of the item it belongs to.
    fn decode_teacher<R: Rng>(
        &self,
        g: &mut Graph<'_, F>,
        c: Var,
        segments: &[(usize, usize)],
        targets: &[Vec<usize>],
        rng: &mut R,
    ) -> Result<(Var, Vec<usize>, Vec<usize>), ModelError> {
        let (mut hs, mut cs) = self.decoder_init(g, c, segments);
        let steps = targets.iter().map(Vec::len).max().unwrap_or(0);
        let mut prev = vec![SOS; targets.len()];
        let mut tops = Vec::with_capacity(steps);
        for j in 0..steps {
            tops.push(self.decoder_step(g, &prev, &mut hs, &mut cs, rng)?);
            for (p, t) in prev.iter_mut().zip(targets) {
                *p = t.get(j).copied().unwrap_or(PAD);
            }
        }
        let mut picks = Vec::new();
        let mut flat = Vec::new();
        let mut owner = Vec::new();
        let mut row_segments = Vec::new();
        for (d, t) in targets.iter().enumerate() {
            for (j, &sym) in t.iter().enumerate() {
                picks.push((j, d));
                flat.push(sym);
                owner.push(d);
                row_segments.push(segments[d]);
            }
        }
        let stacked = g.gather(&tops, picks);
        let (logits, _) = self.readout(g, stacked, c, row_segments);
        Ok((logits, flat, owner))
    }

    /// Builds the training objective for one episode on `g`.
    ///
    /// With `support_loss`, support items are decoded as extra queries with
    /// the same per-symbol weight. Variants without memory ignore the
    /// support set entirely.
    pub fn episode_loss<R: Rng>(
        &self,
        g: &mut Graph<'_, F>,
        support: &[Pair],
        query: &[Pair],
        support_loss: bool,
        rng: &mut R,
    ) -> Result<EpisodeLoss, ModelError> {
        let fwd = self.forward_teacher(g, support, query, support_loss, rng)?;
        let (logits, targets, is_query) = (fwd.logits, fwd.targets, fwd.is_query);
        let loss = g.masked_nll(logits, &targets, &vec![true; targets.len()])?;
        let query_symbols = is_query.iter().filter(|&&q| q).count();
        let query_loss = if query_symbols == targets.len() {
            g.scalar(loss).to_f64().unwrap_or(f64::NAN)
        } else {
            let ql = g.masked_nll(logits, &targets, &is_query)?;
            g.scalar(ql).to_f64().unwrap_or(f64::NAN)
        };
        Ok(EpisodeLoss { loss, query_loss, query_symbols, total_symbols: targets.len() })
    }

    fn forward_teacher<R: Rng>(
        &self,
        g: &mut Graph<'_, F>,
        support: &[Pair],
        query: &[Pair],
        support_loss: bool,
        rng: &mut R,
    ) -> Result<TeacherForward, ModelError> {
        let memory = self.ids.f_oe.as_ref();
        let support = if memory.is_some() { canonical_support(support) } else { Vec::new() };
        if memory.is_some() && support.is_empty() {
            return Err(ModelError::EmptySupport);
        }
        let n_s = support.len();
        let instructions: Vec<&Instruction> =
            support.iter().map(|p| &p.instruction).chain(query.iter().map(|p| &p.instruction)).collect();
        let in_seqs = self.encode_inputs(&instructions)?;
        let enc = self.run_encoder(g, &self.ids.f_ie, self.ids.in_emb, &in_seqs, true, rng)?;
        let steps = enc.steps.expect("steps requested");

        let mem = match memory {
            Some(f_oe) => {
                let k = g.gather(&[enc.finals], (0..n_s).map(|i| (0, i)).collect());
                let out_seqs = self.encode_outputs(&support)?;
                let v = self.run_encoder(g, f_oe, self.ids.out_emb, &out_seqs, false, rng)?.finals;
                Some(self.memory_attend(g, steps, k, v).0)
            }
            None => None,
        };
        let c = self.context(g, steps, mem);

        let first = if support_loss && n_s > 0 { 0 } else { n_s };
        let decoded: Vec<usize> = (first..n_s + query.len()).collect();
        let segments: Vec<(usize, usize)> = decoded.iter().map(|&i| segment_of(&enc, i)).collect();
        let pairs: Vec<&Pair> = support.iter().copied().chain(query.iter()).collect();
        let targets = self.encode_outputs(&decoded.iter().map(|&i| pairs[i]).collect::<Vec<_>>())?;
        let (logits, flat, owner) = self.decode_teacher(g, c, &segments, &targets, rng)?;
        let is_query = owner.iter().map(|&d| decoded[d] >= n_s).collect();
        let query_segments = (n_s..n_s + query.len()).map(|i| segment_of(&enc, i)).collect();
        Ok(TeacherForward { logits, targets: flat, is_query, context: c, query_segments })
    }

    /// Teacher-forced query logits in evaluation mode (one row per target
    /// symbol, queries in order).
    pub fn query_logits(&self, support: &[Pair], query: &[Pair]) -> Result<Tensor<F>, ModelError> {
        let mut g = Graph::new(&self.params, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fwd = self.forward_teacher(&mut g, support, query, false, &mut rng)?;
        Ok(g.value(fwd.logits).clone())
    }

    /// For each query, the l2 norm of the query-loss gradient with respect
    /// to every row `C_t` of its context matrix (teacher forcing, eval mode).
    pub fn context_gradient_norms(&self, support: &[Pair], query: &[Pair]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut g = Graph::new(&self.params, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fwd = self.forward_teacher(&mut g, support, query, false, &mut rng)?;
        let loss = g.masked_nll(fwd.logits, &fwd.targets, &fwd.is_query)?;
        let grads = g.backward(loss);
        let m = self.config.m;
        let zero = Tensor::zeros(g.value(fwd.context).rows(), m);
        let dc = grads.wrt(fwd.context).unwrap_or(&zero);
        Ok(fwd
            .query_segments
            .iter()
            .map(|&(start, len)| {
                (start..start + len)
                    .map(|t| dc.row(t).iter().map(|x| x.to_f64().unwrap_or(f64::NAN).powi(2)).sum::<f64>().sqrt())
                    .collect()
            })
            .collect())
    }

    /// Encodes the support set into keys and values.
    pub fn encode_memory(&self, support: &[Pair]) -> Result<Option<Memory<F>>, ModelError> {
        let Some(f_oe) = self.ids.f_oe.as_ref() else { return Ok(None) };
        let support = canonical_support(support);
        if support.is_empty() {
            return Err(ModelError::EmptySupport);
        }
        let mut g = Graph::new(&self.params, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ins = self.encode_inputs(&support.iter().map(|p| &p.instruction).collect::<Vec<_>>())?;
        let outs = self.encode_outputs(&support)?;
        let k = self.run_encoder(&mut g, &self.ids.f_ie, self.ids.in_emb, &ins, false, &mut rng)?.finals;
        let v = self.run_encoder(&mut g, f_oe, self.ids.out_emb, &outs, false, &mut rng)?.finals;
        Ok(Some(Memory {
            keys: g.value(k).clone(),
            values: g.value(v).clone(),
            labels: support.iter().map(|p| p.instruction.to_string()).collect(),
        }))
    }

    /// Greedy decoding of every query against one support set.
    pub fn predict(&self, support: &[Pair], queries: &[Instruction], want_trace: bool) -> Result<Vec<Prediction>, ModelError> {
        let memory = self.encode_memory(support)?;
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(PREDICT_CHUNK) {
            out.extend(self.predict_with(memory.as_ref(), chunk, want_trace)?);
        }
        Ok(out)
    }

    /// Greedy decoding against an already-encoded memory.
    pub fn predict_with(
        &self,
        memory: Option<&Memory<F>>,
        queries: &[Instruction],
        want_trace: bool,
    ) -> Result<Vec<Prediction>, ModelError> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        if self.config.variant.uses_memory() && memory.is_none() {
            return Err(ModelError::EmptySupport);
        }
        let mut g = Graph::new(&self.params, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let in_seqs = self.encode_inputs(&queries.iter().collect::<Vec<_>>())?;
        let enc = self.run_encoder(&mut g, &self.ids.f_ie, self.ids.in_emb, &in_seqs, true, &mut rng)?;
        let steps = enc.steps.expect("steps requested");
        let (mem, a) = match memory {
            Some(mm) if self.config.variant.uses_memory() => {
                let k = g.constant(mm.keys.clone());
                let v = g.constant(mm.values.clone());
                let (mv, a) = self.memory_attend(&mut g, steps, k, v);
                (Some(mv), Some(a))
            }
            _ => (None, None),
        };
        let c = self.context(&mut g, steps, mem);
        let segments: Vec<(usize, usize)> = (0..queries.len()).map(|i| segment_of(&enc, i)).collect();

        let b = queries.len();
        let (mut hs, mut cs) = self.decoder_init(&mut g, c, &segments);
        let mut prev = vec![SOS; b];
        let mut outputs: Vec<Vec<usize>> = vec![Vec::new(); b];
        let mut emitted: Vec<Vec<usize>> = vec![Vec::new(); b];
        let mut dec_attn: Vec<Vec<Vec<f64>>> = vec![Vec::new(); b];
        let mut done = vec![false; b];
        for _ in 0..self.config.max_decode_len {
            let top = self.decoder_step(&mut g, &prev, &mut hs, &mut cs, &mut rng)?;
            let (logits, attn) = self.readout(&mut g, top, c, segments.clone());
            let weights = if want_trace { attn.and_then(|u| g.attention_weights(u)) } else { None };
            let lv = g.value(logits);
            for i in 0..b {
                if done[i] {
                    continue;
                }
                let sym = argmax(lv.row(i));
                emitted[i].push(sym);
                if let Some(w) = &weights {
                    dec_attn[i].push(w[i].iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect());
                }
                if sym == EOS {
                    done[i] = true;
                } else {
                    outputs[i].push(sym);
                }
                prev[i] = sym;
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }

        let a_rows = a.map(|a| g.value(a).clone());
        let mut preds = Vec::with_capacity(b);
        for i in 0..b {
            let output: Vec<String> = outputs[i].iter().map(|&s| self.output_vocab.symbol(s).to_string()).collect();
            let trace = want_trace.then(|| {
                let (start, len) = segments[i];
                let mut query: Vec<String> = queries[i].tokens().to_vec();
                query.push(SPECIALS[EOS].to_string());
                AttentionTrace {
                    query,
                    support: memory.map(|m| m.labels.clone()).unwrap_or_default(),
                    memory_attention: a_rows
                        .as_ref()
                        .map(|a| {
                            (start..start + len)
                                .map(|t| a.row(t).iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect())
                                .collect()
                        })
                        .unwrap_or_default(),
                    decoder_steps: emitted[i].iter().map(|&s| self.output_vocab.symbol(s).to_string()).collect(),
                    decoder_attention: std::mem::take(&mut dec_attn[i]),
                }
            });
            preds.push(Prediction { output, overflow: !done[i], trace });
        }
        Ok(preds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.5f64, 0.9, 0.9, 0.1]), 1);
        assert_eq!(argmax(&[1.0f64, 1.0]), 0);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(!Variant::NoSupportLoss.support_loss());
        assert!(!Variant::StandardSeq2Seq.uses_memory());
        assert!(!Variant::NoDecoderAttention.decoder_attention());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { max_decode_len: 48, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { m: 0, ..Default::default() }.validate().is_err());
    }
}
