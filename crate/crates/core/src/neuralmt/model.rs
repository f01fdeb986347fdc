//! Forward and backward passes of the character-level encoder-decoder.
//!
//! Encoder: character embedding, multi-width convolution (ReLU, same-length
//! zero padding), max-pooling over successive windows of `pool_interval`
//! positions, a highway stack and a bidirectional GRU. Decoder: a stack of
//! GRUs with additive attention over the encoder states, emitting one
//! character per step.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::config::ModelConfig;
use super::params::{Attention, Gru, Params};
use super::vocab::{CharVocab, BOS, EOS, PAD, UNK};
use super::MtError;

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationModel {
    pub config: ModelConfig,
    pub source_vocab: CharVocab,
    pub target_vocab: CharVocab,
    pub params: Params,
}

/// Encoder output: one row per pooled source window.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates {
    pub states: Array2<f64>,
}

impl EncoderStates {
    pub fn count(&self) -> usize {
        self.states.nrows()
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(scores: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = scores.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut out = scores.mapv(|v| (v - max).exp());
    let sum = out.sum();
    out /= sum;
    out
}

fn log_softmax(scores: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = scores.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + scores.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    scores.mapv(|v| v - lse)
}

/// `m += a ⊗ b`
/// `dst += aᵀ b` without a temporary.
fn accumulate_tn(dst: &mut Array2<f64>, a: &Array2<f64>, b: &Array2<f64>) {
    general_mat_mul(1.0, &a.t(), b, 1.0, dst);
}

fn add_outer(m: &mut Array2<f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    for (mut row, &ai) in m.rows_mut().into_iter().zip(a.iter()) {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    }
}

struct GruStep {
    h_prev: Array1<f64>,
    z: Array1<f64>,
    r: Array1<f64>,
    n: Array1<f64>,
    /// Recurrent contribution to the candidate gate, before the reset gate.
    uh_n: Array1<f64>,
}

/// One GRU step given the input projection `ax = W x + b`.
fn gru_step(g: &Gru, ax: ArrayView1<'_, f64>, h_prev: &Array1<f64>) -> (Array1<f64>, GruStep) {
    let h = g.hidden();
    let uh = g.u.dot(h_prev);
    let z = Array1::from_shape_fn(h, |i| sigmoid(ax[i] + uh[i]));
    let r = Array1::from_shape_fn(h, |i| sigmoid(ax[h + i] + uh[h + i]));
    let uh_n = uh.slice(s![2 * h..]).to_owned();
    let n = Array1::from_shape_fn(h, |i| (ax[2 * h + i] + r[i] * uh_n[i]).tanh());
    let out = Array1::from_shape_fn(h, |i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i]);
    (
        out,
        GruStep {
            h_prev: h_prev.clone(),
            z,
            r,
            n,
            uh_n,
        },
    )
}

/// Backward through one GRU step. Accumulates into `grad.u` and returns the
/// gradients of the input projection and the previous hidden state.
fn gru_step_backward(g: &Gru, grad: &mut Gru, st: &GruStep, dh: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
    let h = g.hidden();
    let mut dax = Array1::zeros(3 * h);
    let mut duh = Array1::zeros(3 * h);
    let mut dh_prev = Array1::zeros(h);
    for i in 0..h {
        let (z, r, n) = (st.z[i], st.r[i], st.n[i]);
        let dz = dh[i] * (st.h_prev[i] - n);
        let dn = dh[i] * (1.0 - z);
        dh_prev[i] = dh[i] * z;
        let dn_pre = dn * (1.0 - n * n);
        let dr_pre = dn_pre * st.uh_n[i] * r * (1.0 - r);
        let dz_pre = dz * z * (1.0 - z);
        dax[i] = dz_pre;
        dax[h + i] = dr_pre;
        dax[2 * h + i] = dn_pre;
        duh[i] = dz_pre;
        duh[h + i] = dr_pre;
        duh[2 * h + i] = dn_pre * r;
    }
    add_outer(&mut grad.u, duh.view(), st.h_prev.view());
    dh_prev += &g.u.t().dot(&duh);
    (dax, dh_prev)
}

struct ConvCache {
    /// Flattened input windows, `[L, width * embed_dim]`.
    windows: Array2<f64>,
    /// Post-ReLU activations `[L, count]`.
    act: Array2<f64>,
}

/// Convolution and pooling of one source.
struct ConvStage {
    ids: Vec<usize>,
    convs: Vec<ConvCache>,
    /// Source position chosen by max-pooling, `[pooled][feature]`.
    pool_argmax: Vec<Vec<usize>>,
}

struct HighwayCache {
    input: Array2<f64>,
    gate: Array2<f64>,
    transform: Array2<f64>,
}

struct RnnStage {
    fwd_steps: Vec<GruStep>,
    bwd_steps: Vec<GruStep>,
}

/// Encoder activations of a batch of sources. The position-wise layers
/// (highway stack, recurrent input projections) run once on the pooled rows
/// of all sources stacked together; `offsets[i]..offsets[i + 1]` are the rows
/// of source `i`.
struct EncoderCache {
    stages: Vec<ConvStage>,
    offsets: Vec<usize>,
    highways: Vec<HighwayCache>,
    rnn_input: Array2<f64>,
    rnns: Vec<RnnStage>,
}

struct AttentionStep {
    query: Array1<f64>,
    weights: Array1<f64>,
    /// `tanh(Wq q + Wk h_j + b)`, `[S, A]`.
    hidden: Array2<f64>,
}

struct DecoderStep {
    input_id: usize,
    attn: AttentionStep,
    layer_inputs: Vec<Array1<f64>>,
    grus: Vec<GruStep>,
}

/// Attention scores, weights and context for one decoder query. `keys` are
/// the precomputed `Wk h_j` rows.
fn attend(attn: &Attention, query: &Array1<f64>, enc: &Array2<f64>, keys: &Array2<f64>) -> (Array1<f64>, AttentionStep) {
    let qa = attn.query_w.dot(query) + &attn.bias;
    let mut hidden = keys.clone();
    for mut row in hidden.rows_mut() {
        row += &qa;
        row.mapv_inplace(f64::tanh);
    }
    let scores = hidden.dot(&attn.score_v);
    let weights = softmax(scores.view());
    let context = enc.t().dot(&weights);
    (
        context,
        AttentionStep {
            query: query.clone(),
            weights,
            hidden,
        },
    )
}

/// Teacher-forced decoder pass over one target.
struct DecoderTrace {
    enc_mean: Array1<f64>,
    keys: Array2<f64>,
    init_states: Vec<Array1<f64>>,
    steps: Vec<DecoderStep>,
    /// `[steps, decoder_hidden + enc_dim]`
    outputs: Array2<f64>,
    probs: Array2<f64>,
    targets: Vec<usize>,
    loss: f64,
}

/// Forward pass over a batch, kept for backpropagation. Each source keeps
/// the decoder pass of its lowest-loss target.
pub(crate) struct Trace {
    encoder: EncoderCache,
    encs: Vec<Array2<f64>>,
    decoders: Vec<DecoderTrace>,
    /// Index of the chosen target of each source.
    chosen: Vec<usize>,
}

impl Trace {
    pub(crate) fn losses(&self) -> impl Iterator<Item = f64> + '_ {
        self.decoders.iter().map(|d| d.loss)
    }

    pub(crate) fn chosen(&self) -> &[usize] {
        &self.chosen
    }
}

impl TranslationModel {
    pub fn new(config: ModelConfig, source_vocab: CharVocab, target_vocab: CharVocab) -> Result<Self, MtError> {
        config.validate()?;
        let params = Params::init(&config, source_vocab.len(), target_vocab.len(), config.seed);
        Ok(Self {
            config,
            source_vocab,
            target_vocab,
            params,
        })
    }

    /// Verifies every tensor has the shape implied by config and vocabularies.
    pub fn shape_audit(&self) -> Result<(), MtError> {
        let expected = Params::zeros(&self.config, self.source_vocab.len(), self.target_vocab.len()).shapes();
        let actual = self.params.shapes();
        if expected != actual {
            let first = expected
                .iter()
                .zip(&actual)
                .find(|(e, a)| e != a)
                .map(|(e, a)| format!("{} expected {:?}, found {} {:?}", e.0, e.1, a.0, a.1))
                .unwrap_or_else(|| "tensor count differs".into());
            return Err(MtError::ShapeMismatch(first));
        }
        Ok(())
    }

    pub fn source_ids(&self, source: &str) -> Result<Vec<usize>, MtError> {
        let ids = self.source_vocab.encode(source);
        if ids.is_empty() {
            return Err(MtError::EmptySource);
        }
        Ok(ids)
    }

    pub(crate) fn target_ids(&self, target: &str) -> Result<Vec<usize>, MtError> {
        let ids = self.target_vocab.encode(target);
        if ids.is_empty() {
            return Err(MtError::EmptyTarget);
        }
        Ok(ids)
    }

    pub fn encode(&self, source: &str) -> Result<EncoderStates, MtError> {
        let ids = self.source_ids(source)?;
        Ok(EncoderStates {
            states: self.encode_one(&ids),
        })
    }

    /// Which side of each non-differentiable point (ReLU at zero, max-pool
    /// argmax) the encoder is on for `source`. Two parameter settings with
    /// the same pattern lie in the same smooth piece of the loss.
    pub(crate) fn activation_pattern(&self, source: &str) -> Result<Vec<usize>, MtError> {
        let ids = self.source_ids(source)?;
        let (_, cache) = self.encode_batch(&[ids]);
        let mut pattern = Vec::new();
        for c in &cache.stages[0].convs {
            pattern.extend(c.act.iter().map(|&v| usize::from(v > 0.0)));
        }
        pattern.extend(cache.stages[0].pool_argmax.iter().flatten().copied());
        for h in &cache.highways {
            pattern.extend(h.transform.iter().map(|&v| usize::from(v > 0.0)));
        }
        Ok(pattern)
    }

    /// Per-position convolution features before pooling, `[L, 688]`.
    pub fn conv_features(&self, source: &str) -> Result<Array2<f64>, MtError> {
        let ids = self.source_ids(source)?;
        let (_, stage) = self.conv_pool(&ids);
        let views: Vec<_> = stage.convs.iter().map(|c| c.act.view()).collect();
        Ok(ndarray::concatenate(Axis(1), &views).expect("equal row counts"))
    }

    fn conv_pool(&self, ids: &[usize]) -> (Array2<f64>, ConvStage) {
        let cfg = &self.config;
        let p = &self.params;
        let len = ids.len();
        let d = cfg.embed_dim;

        let mut convs = Vec::with_capacity(p.conv.len());
        for (layer, &width) in p.conv.iter().zip(&cfg.conv_filter_widths) {
            let left = (width - 1) / 2;
            let mut windows = Array2::zeros((len, width * d));
            for t in 0..len {
                for o in 0..width {
                    let src = t as isize - left as isize + o as isize;
                    if src >= 0 && (src as usize) < len {
                        windows
                            .slice_mut(s![t, o * d..(o + 1) * d])
                            .assign(&p.src_embed.row(ids[src as usize]));
                    }
                }
            }
            let mut act = windows.dot(&layer.w.t()) + &layer.b;
            act.mapv_inplace(|v| v.max(0.0));
            convs.push(ConvCache { windows, act });
        }

        let n = cfg.conv_output_dim();
        let k = cfg.pool_interval;
        let pooled_len = len.div_ceil(k);
        let mut pooled = Array2::zeros((pooled_len, n));
        let mut pool_argmax = vec![vec![0usize; n]; pooled_len];
        for j in 0..pooled_len {
            let (start, end) = (j * k, ((j + 1) * k).min(len));
            let mut f = 0;
            for c in &convs {
                for col in 0..c.act.ncols() {
                    let mut best = start;
                    for t in start + 1..end {
                        if c.act[[t, col]] > c.act[[best, col]] {
                            best = t;
                        }
                    }
                    pooled[[j, f]] = c.act[[best, col]];
                    pool_argmax[j][f] = best;
                    f += 1;
                }
            }
        }
        (
            pooled,
            ConvStage {
                ids: ids.to_vec(),
                convs,
                pool_argmax,
            },
        )
    }

    fn encode_one(&self, ids: &[usize]) -> Array2<f64> {
        let (mut encs, _) = self.encode_batch(std::slice::from_ref(&ids.to_vec()));
        encs.pop().expect("one source")
    }

    fn encode_batch(&self, sources: &[Vec<usize>]) -> (Vec<Array2<f64>>, EncoderCache) {
        let p = &self.params;
        let mut stages = Vec::with_capacity(sources.len());
        let mut pooled = Vec::with_capacity(sources.len());
        let mut offsets = vec![0];
        for ids in sources {
            let (rows, stage) = self.conv_pool(ids);
            offsets.push(offsets.last().copied().unwrap_or(0) + rows.nrows());
            pooled.push(rows);
            stages.push(stage);
        }
        let views: Vec<_> = pooled.iter().map(|x| x.view()).collect();
        let mut x = ndarray::concatenate(Axis(0), &views).expect("equal feature widths");

        let mut highways = Vec::with_capacity(p.highway.len());
        for hw in &p.highway {
            let mut gate = x.dot(&hw.gate.w.t()) + &hw.gate.b;
            gate.mapv_inplace(sigmoid);
            let mut transform = x.dot(&hw.transform.w.t()) + &hw.transform.b;
            transform.mapv_inplace(|v| v.max(0.0));
            let y = &gate * &transform + &(1.0 - &gate) * &x;
            highways.push(HighwayCache { input: x, gate, transform });
            x = y;
        }

        let he = self.config.encoder_hidden;
        let ax_f = x.dot(&p.enc_fwd.w.t()) + &p.enc_fwd.b;
        let ax_b = x.dot(&p.enc_bwd.w.t()) + &p.enc_bwd.b;
        let mut encs = Vec::with_capacity(sources.len());
        let mut rnns = Vec::with_capacity(sources.len());
        for w in offsets.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let mut enc = Array2::zeros((hi - lo, 2 * he));
            let mut fwd_steps = Vec::with_capacity(hi - lo);
            let mut h = Array1::zeros(he);
            for j in lo..hi {
                let (next, st) = gru_step(&p.enc_fwd, ax_f.row(j), &h);
                enc.slice_mut(s![j - lo, ..he]).assign(&next);
                fwd_steps.push(st);
                h = next;
            }
            let mut bwd_steps = Vec::with_capacity(hi - lo);
            let mut h = Array1::zeros(he);
            for j in (lo..hi).rev() {
                let (next, st) = gru_step(&p.enc_bwd, ax_b.row(j), &h);
                enc.slice_mut(s![j - lo, he..]).assign(&next);
                bwd_steps.push(st);
                h = next;
            }
            bwd_steps.reverse();
            encs.push(enc);
            rnns.push(RnnStage { fwd_steps, bwd_steps });
        }

        (
            encs,
            EncoderCache {
                stages,
                offsets,
                highways,
                rnn_input: x,
                rnns,
            },
        )
    }

    /// Additive attention of one decoder state over the encoder states.
    pub fn attention(&self, decoder_state: &Array1<f64>, enc: &EncoderStates) -> (Array1<f64>, Array1<f64>) {
        let keys = enc.states.dot(&self.params.attn.key_w.t());
        let (context, step) = attend(&self.params.attn, decoder_state, &enc.states, &keys);
        (context, step.weights)
    }

    fn initial_states(&self, enc_mean: &Array1<f64>) -> Vec<Array1<f64>> {
        self.params
            .bridge
            .iter()
            .map(|b| (b.w.dot(enc_mean) + &b.b).mapv(f64::tanh))
            .collect()
    }

    fn decoder_step(
        &self,
        input_id: usize,
        states: &[Array1<f64>],
        enc: &Array2<f64>,
        keys: &Array2<f64>,
    ) -> (Vec<Array1<f64>>, Array1<f64>, DecoderStep) {
        let p = &self.params;
        let top = states.last().expect("at least one decoder layer");
        let (context, attn) = attend(&p.attn, top, enc, keys);
        let d = self.config.embed_dim;
        let mut x = Array1::zeros(d + context.len());
        x.slice_mut(s![..d]).assign(&p.tgt_embed.row(input_id));
        x.slice_mut(s![d..]).assign(&context);
        let mut new_states = Vec::with_capacity(states.len());
        let mut layer_inputs = Vec::with_capacity(states.len());
        let mut grus = Vec::with_capacity(states.len());
        for (g, prev) in p.dec.iter().zip(states) {
            let ax = g.w.dot(&x) + &g.b;
            let (h, st) = gru_step(g, ax.view(), prev);
            layer_inputs.push(x);
            grus.push(st);
            x = h.clone();
            new_states.push(h);
        }
        let hd = self.config.decoder_hidden;
        let mut out = Array1::zeros(hd + context.len());
        out.slice_mut(s![..hd]).assign(&x);
        out.slice_mut(s![hd..]).assign(&context);
        (
            new_states,
            out,
            DecoderStep {
                input_id,
                attn,
                layer_inputs,
                grus,
            },
        )
    }

    /// Teacher-forced decoder pass; `target` are ids without BOS/EOS.
    fn decode_forward(&self, enc: &Array2<f64>, target: &[usize]) -> DecoderTrace {
        let enc_mean = enc.mean_axis(Axis(0)).expect("non-empty source");
        let keys = enc.dot(&self.params.attn.key_w.t());
        let init_states = self.initial_states(&enc_mean);

        let inputs: Vec<usize> = std::iter::once(BOS).chain(target.iter().copied()).collect();
        let targets: Vec<usize> = target.iter().copied().chain(std::iter::once(EOS)).collect();
        let width = self.config.decoder_hidden + enc.ncols();
        let mut outputs = Array2::zeros((inputs.len(), width));
        let mut steps = Vec::with_capacity(inputs.len());
        let mut states = init_states.clone();
        for (t, &id) in inputs.iter().enumerate() {
            let (next, out, step) = self.decoder_step(id, &states, enc, &keys);
            outputs.row_mut(t).assign(&out);
            steps.push(step);
            states = next;
        }
        let logits = outputs.dot(&self.params.out.w.t()) + &self.params.out.b;
        let mut probs = Array2::zeros(logits.raw_dim());
        let mut loss = 0.0;
        for (t, &y) in targets.iter().enumerate() {
            let logp = log_softmax(logits.row(t));
            loss -= logp[y];
            probs.row_mut(t).assign(&logp.mapv(f64::exp));
        }
        loss /= targets.len() as f64;
        DecoderTrace {
            enc_mean,
            keys,
            init_states,
            steps,
            outputs,
            probs,
            targets,
            loss,
        }
    }

    /// Forward pass over a batch. `targets[i]` lists the admissible targets
    /// of `sources[i]`; the one with the lowest loss is kept (first on ties).
    pub(crate) fn forward(&self, sources: &[Vec<usize>], targets: &[Vec<Vec<usize>>]) -> Trace {
        assert_eq!(sources.len(), targets.len(), "one target list per source");
        let (encs, encoder) = self.encode_batch(sources);
        let mut decoders = Vec::with_capacity(sources.len());
        let mut chosen = Vec::with_capacity(sources.len());
        for (enc, candidates) in encs.iter().zip(targets) {
            let mut best: Option<(usize, DecoderTrace)> = None;
            for (i, target) in candidates.iter().enumerate() {
                let trace = self.decode_forward(enc, target);
                if best.as_ref().is_none_or(|b| trace.loss < b.1.loss) {
                    best = Some((i, trace));
                }
            }
            let (i, trace) = best.expect("at least one target per source");
            chosen.push(i);
            decoders.push(trace);
        }
        Trace {
            encoder,
            encs,
            decoders,
            chosen,
        }
    }

    /// Accumulates `scale * d(sum of losses)/d(params)` into `grad`.
    pub(crate) fn backward(&self, trace: &Trace, grad: &mut Params, scale: f64) {
        let dencs: Vec<Array2<f64>> = trace
            .encs
            .iter()
            .zip(&trace.decoders)
            .map(|(enc, dec)| self.decoder_backward(enc, dec, grad, scale))
            .collect();
        self.encoder_backward(&trace.encoder, &dencs, grad);
    }

    /// Backward through the decoder of one source; returns the gradient of
    /// its encoder states.
    fn decoder_backward(&self, enc: &Array2<f64>, trace: &DecoderTrace, grad: &mut Params, scale: f64) -> Array2<f64> {
        let p = &self.params;
        let cfg = &self.config;
        let hd = cfg.decoder_hidden;
        let d = cfg.embed_dim;
        let n_steps = trace.targets.len();

        let mut dlogits = trace.probs.clone();
        for (t, &y) in trace.targets.iter().enumerate() {
            dlogits[[t, y]] -= 1.0;
        }
        dlogits *= scale / n_steps as f64;
        accumulate_tn(&mut grad.out.w, &dlogits, &trace.outputs);
        grad.out.b += &dlogits.sum_axis(Axis(0));
        let doutputs = dlogits.dot(&p.out.w);

        let mut denc = Array2::<f64>::zeros(enc.raw_dim());
        let mut dkeys = Array2::<f64>::zeros(trace.keys.raw_dim());
        let mut carry: Vec<Array1<f64>> = (0..p.dec.len()).map(|_| Array1::zeros(hd)).collect();
        let top = p.dec.len() - 1;
        for (t, step) in trace.steps.iter().enumerate().rev() {
            let dout = doutputs.row(t);
            carry[top] += &dout.slice(s![..hd]);
            let mut dcontext = dout.slice(s![hd..]).to_owned();
            for l in (0..p.dec.len()).rev() {
                let dh = std::mem::replace(&mut carry[l], Array1::zeros(hd));
                let (dax, dh_prev) = gru_step_backward(&p.dec[l], &mut grad.dec[l], &step.grus[l], &dh);
                add_outer(&mut grad.dec[l].w, dax.view(), step.layer_inputs[l].view());
                grad.dec[l].b += &dax;
                let dinput = p.dec[l].w.t().dot(&dax);
                carry[l] = dh_prev;
                if l > 0 {
                    carry[l - 1] += &dinput;
                } else {
                    grad.tgt_embed.row_mut(step.input_id).scaled_add(1.0, &dinput.slice(s![..d]));
                    dcontext += &dinput.slice(s![d..]);
                }
            }
            let dquery = attend_backward(&p.attn, &mut grad.attn, &step.attn, enc, &dcontext, &mut denc, &mut dkeys);
            carry[top] += &dquery;
        }

        let mut denc_mean = Array1::<f64>::zeros(trace.enc_mean.len());
        for (l, bridge) in p.bridge.iter().enumerate() {
            let s0 = &trace.init_states[l];
            let dpre = Array1::from_shape_fn(hd, |i| carry[l][i] * (1.0 - s0[i] * s0[i]));
            add_outer(&mut grad.bridge[l].w, dpre.view(), trace.enc_mean.view());
            grad.bridge[l].b += &dpre;
            denc_mean += &bridge.w.t().dot(&dpre);
        }
        let rows = enc.nrows() as f64;
        for mut row in denc.rows_mut() {
            row.scaled_add(1.0 / rows, &denc_mean);
        }
        accumulate_tn(&mut grad.attn.key_w, &dkeys, enc);
        denc += &dkeys.dot(&p.attn.key_w);
        denc
    }

    fn encoder_backward(&self, cache: &EncoderCache, dencs: &[Array2<f64>], grad: &mut Params) {
        let p = &self.params;
        let cfg = &self.config;
        let he = cfg.encoder_hidden;
        let total = cache.rnn_input.nrows();

        let mut dax_f = Array2::<f64>::zeros((total, 3 * he));
        let mut dax_b = Array2::<f64>::zeros((total, 3 * he));
        for ((denc, rnn), w) in dencs.iter().zip(&cache.rnns).zip(cache.offsets.windows(2)) {
            let lo = w[0];
            let len = denc.nrows();
            let mut carry = Array1::<f64>::zeros(he);
            for j in (0..len).rev() {
                let dh = &denc.slice(s![j, ..he]) + &carry;
                let (dax, dh_prev) = gru_step_backward(&p.enc_fwd, &mut grad.enc_fwd, &rnn.fwd_steps[j], &dh);
                dax_f.row_mut(lo + j).assign(&dax);
                carry = dh_prev;
            }
            let mut carry = Array1::<f64>::zeros(he);
            for j in 0..len {
                let dh = &denc.slice(s![j, he..]) + &carry;
                let (dax, dh_prev) = gru_step_backward(&p.enc_bwd, &mut grad.enc_bwd, &rnn.bwd_steps[j], &dh);
                dax_b.row_mut(lo + j).assign(&dax);
                carry = dh_prev;
            }
        }
        accumulate_tn(&mut grad.enc_fwd.w, &dax_f, &cache.rnn_input);
        grad.enc_fwd.b += &dax_f.sum_axis(Axis(0));
        accumulate_tn(&mut grad.enc_bwd.w, &dax_b, &cache.rnn_input);
        grad.enc_bwd.b += &dax_b.sum_axis(Axis(0));
        let mut dx = dax_f.dot(&p.enc_fwd.w) + dax_b.dot(&p.enc_bwd.w);

        for (l, hw) in p.highway.iter().enumerate().rev() {
            let c = &cache.highways[l];
            let dgate_pre = &dx * &(&c.transform - &c.input) * &c.gate * &(1.0 - &c.gate);
            let dtrans_pre = Array2::from_shape_fn(dx.raw_dim(), |ij| if c.transform[ij] > 0.0 { dx[ij] * c.gate[ij] } else { 0.0 });
            let g = &mut grad.highway[l];
            accumulate_tn(&mut g.gate.w, &dgate_pre, &c.input);
            g.gate.b += &dgate_pre.sum_axis(Axis(0));
            accumulate_tn(&mut g.transform.w, &dtrans_pre, &c.input);
            g.transform.b += &dtrans_pre.sum_axis(Axis(0));
            let carried = &dx * &(1.0 - &c.gate);
            dx = carried + dgate_pre.dot(&hw.gate.w) + dtrans_pre.dot(&hw.transform.w);
        }

        for (stage, w) in cache.stages.iter().zip(cache.offsets.windows(2)) {
            self.conv_backward(stage, dx.slice(s![w[0]..w[1], ..]), grad);
        }
    }

    fn conv_backward(&self, stage: &ConvStage, dx: ArrayView2<'_, f64>, grad: &mut Params) {
        let p = &self.params;
        let cfg = &self.config;
        let pooled_len = dx.nrows();
        let len = stage.ids.len();
        let d = cfg.embed_dim;
        let mut dembed = Array2::<f64>::zeros((len, d));
        let mut f = 0;
        for (g, (layer, &width)) in p.conv.iter().zip(&cfg.conv_filter_widths).enumerate() {
            let c = &stage.convs[g];
            let mut dact = Array2::<f64>::zeros(c.act.raw_dim());
            for col in 0..c.act.ncols() {
                for j in 0..pooled_len {
                    let t = stage.pool_argmax[j][f + col];
                    if c.act[[t, col]] > 0.0 {
                        dact[[t, col]] += dx[[j, f + col]];
                    }
                }
            }
            f += c.act.ncols();
            accumulate_tn(&mut grad.conv[g].w, &dact, &c.windows);
            grad.conv[g].b += &dact.sum_axis(Axis(0));
            let dwin = dact.dot(&layer.w);
            let left = (width - 1) / 2;
            for t in 0..len {
                for o in 0..width {
                    let src = t as isize - left as isize + o as isize;
                    if src >= 0 && (src as usize) < len {
                        let mut row = dembed.row_mut(src as usize);
                        row += &dwin.slice(s![t, o * d..(o + 1) * d]);
                    }
                }
            }
        }
        for (t, &id) in stage.ids.iter().enumerate() {
            grad.src_embed.row_mut(id).scaled_add(1.0, &dembed.row(t));
        }
    }

    pub fn sequence_loss(&self, source: &str, target: &str) -> Result<f64, MtError> {
        let src = self.source_ids(source)?;
        let tgt = self.target_ids(target)?;
        let enc = self.encode_one(&src);
        Ok(self.decode_forward(&enc, &tgt).loss)
    }

    /// Greedy character-by-character decoding. PAD, BOS and UNK are never
    /// emitted; output stops at EOS or at the configured length cap.
    pub fn decode_greedy(&self, source: &str) -> Result<String, MtError> {
        let ids = self.source_ids(source)?;
        let enc = self.encode_one(&ids);
        let enc_mean = enc.mean_axis(Axis(0)).expect("non-empty source");
        let keys = enc.dot(&self.params.attn.key_w.t());
        let mut states = self.initial_states(&enc_mean);
        let cap = self.config.decode_cap(ids.len());
        let mut out = Vec::new();
        let mut prev = BOS;
        while out.len() < cap {
            let (next, o, _) = self.decoder_step(prev, &states, &enc, &keys);
            let logits = self.params.out.w.dot(&o) + &self.params.out.b;
            let best = logits
                .iter()
                .enumerate()
                .filter(|(i, _)| ![PAD, BOS, UNK].contains(i))
                .fold((EOS, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0;
            if best == EOS {
                break;
            }
            out.push(best);
            prev = best;
            states = next;
        }
        Ok(self.target_vocab.decode(&out))
    }

    /// Output distribution of the first decoding step, for inspection.
    pub fn first_step_distribution(&self, source: &str) -> Result<Array1<f64>, MtError> {
        let ids = self.source_ids(source)?;
        let enc = self.encode_one(&ids);
        let trace = self.decode_forward(&enc, &[]);
        Ok(trace.probs.row(0).to_owned())
    }
}

#[allow(clippy::too_many_arguments)]
fn attend_backward(
    attn: &Attention,
    grad: &mut Attention,
    step: &AttentionStep,
    enc: &Array2<f64>,
    dcontext: &Array1<f64>,
    denc: &mut Array2<f64>,
    dkeys: &mut Array2<f64>,
) -> Array1<f64> {
    let w = &step.weights;
    let dweights = enc.dot(dcontext);
    for (mut row, &wj) in denc.rows_mut().into_iter().zip(w.iter()) {
        row.scaled_add(wj, dcontext);
    }
    let mean = w.dot(&dweights);
    let dscores = Array1::from_shape_fn(w.len(), |j| w[j] * (dweights[j] - mean));
    grad.score_v += &step.hidden.t().dot(&dscores);
    let mut dpre = step.hidden.mapv(|h| 1.0 - h * h);
    for (mut row, &ds) in dpre.rows_mut().into_iter().zip(dscores.iter()) {
        row *= &(&attn.score_v * ds);
    }
    *dkeys += &dpre;
    let dqa = dpre.sum_axis(Axis(0));
    add_outer(&mut grad.query_w, dqa.view(), step.query.view());
    grad.bias += &dqa;
    attn.query_w.t().dot(&dqa)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model(seed: u64) -> TranslationModel {
        let cfg = ModelConfig {
            seed,
            ..ModelConfig::toy()
        };
        let v = CharVocab::build(["abcdefghijklmnopqrstuvwxyz "]);
        TranslationModel::new(cfg, v.clone(), v).unwrap()
    }

    #[test]
    fn pooled_length_is_ceiling() {
        let m = toy_model(1);
        assert_eq!(m.encode(&"a".repeat(23)).unwrap().count(), 5);
        assert_eq!(m.encode("abcde").unwrap().count(), 1);
        assert_eq!(m.encode("abcdef").unwrap().count(), 2);
        assert_eq!(m.encode("abc").unwrap().dim(), 128);
        assert_eq!(m.conv_features(&"x".repeat(9)).unwrap().dim(), (9, 688));
        assert!(matches!(m.encode(""), Err(MtError::EmptySource)));
    }

    #[test]
    fn attention_weights_are_a_distribution() {
        let m = toy_model(3);
        let enc = m.encode("abcdefghijklmnopq").unwrap();
        let q = Array1::from_shape_fn(m.config.decoder_hidden, |i| (i as f64 * 0.37).sin());
        let (ctx, w) = m.attention(&q, &enc);
        assert_eq!(w.len(), 4);
        assert!((w.sum() - 1.0).abs() < 1e-6);
        assert!(w.iter().all(|&x| x >= 0.0));
        assert_eq!(ctx.len(), enc.dim());

        let single = m.encode("abc").unwrap();
        let (_, w1) = m.attention(&q, &single);
        assert_eq!(w1.to_vec(), vec![1.0]);
    }

    #[test]
    fn uniform_scores_give_uniform_weights() {
        let mut m = toy_model(3);
        m.params.attn.score_v.fill(0.0);
        let enc = m.encode("abcdefghijklmnopqrst").unwrap();
        let q = Array1::zeros(m.config.decoder_hidden);
        let (_, w) = m.attention(&q, &enc);
        assert_eq!(w.to_vec(), vec![0.25; 4]);
    }

    #[test]
    fn uniform_output_gives_log_vocab_loss() {
        let mut m = toy_model(5);
        m.params.out.w.fill(0.0);
        m.params.out.b.fill(0.0);
        let v = m.target_vocab.len() as f64;
        let loss = m.sequence_loss("abc", "xyz").unwrap();
        assert!((loss - v.ln()).abs() < 1e-12);
    }

    #[test]
    fn decode_is_deterministic_and_capped() {
        let a = toy_model(9);
        let b = toy_model(9);
        let out = a.decode_greedy("hello").unwrap();
        assert_eq!(out, b.decode_greedy("hello").unwrap());
        assert!(out.chars().count() <= 30);
        // force a model that never emits EOS
        let mut c = toy_model(9);
        c.params.out.b[EOS] = -1e6;
        c.params.out.b[10] = 1e6;
        assert_eq!(c.decode_greedy("hello").unwrap().chars().count(), 30);
    }

    #[test]
    fn softmax_sums_to_one() {
        let m = toy_model(2);
        let p = m.first_step_distribution("abcdefg").unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&x| x >= 0.0));
    }
}
