//! Parameter tensors of the translator.
//!
//! Gradients and Adam moments reuse [`Params`], so every per-tensor operation
//! (initialization, optimizer updates, checksums, serialization) walks the same
//! ordered tensor list.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::ModelConfig;

/// Affine layer `y = W x + b` with `W` stored as `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: Array2::zeros((out, inp)),
            b: Array1::zeros(out),
        }
    }
}

/// Gated recurrent unit with the update, reset and candidate gates stacked
/// in that order along the first axis of `w`, `u` and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

impl Gru {
    fn zeros(inp: usize, hidden: usize) -> Self {
        Self {
            w: Array2::zeros((3 * hidden, inp)),
            u: Array2::zeros((3 * hidden, hidden)),
            b: Array1::zeros(3 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Highway {
    /// Nonlinear branch.
    pub transform: Dense,
    /// Sigmoid gate mixing the transform with the carried input.
    pub gate: Dense,
}

/// Additive attention: `score_j = v · tanh(Wq q + Wk h_j + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub query_w: Array2<f64>,
    pub key_w: Array2<f64>,
    pub bias: Array1<f64>,
    pub score_v: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub src_embed: Array2<f64>,
    /// One affine map per filter width over the flattened window.
    pub conv: Vec<Dense>,
    pub highway: Vec<Highway>,
    pub enc_fwd: Gru,
    pub enc_bwd: Gru,
    /// Initial decoder state per layer, from the mean encoder state.
    pub bridge: Vec<Dense>,
    pub tgt_embed: Array2<f64>,
    pub dec: Vec<Gru>,
    pub attn: Attention,
    pub out: Dense,
}

macro_rules! tensor_list {
    ($p:expr, $iter:ident, $slice:ident) => {{
        let mut out = Vec::new();
        macro_rules! push {
            ($name:expr, $t:expr) => {
                out.push(($name, $t.shape().to_vec(), $t.$slice().expect("standard layout")))
            };
        }
        push!("src_embed".to_string(), $p.src_embed);
        for (i, c) in $p.conv.$iter().enumerate() {
            push!(format!("conv.{i}.w"), c.w);
            push!(format!("conv.{i}.b"), c.b);
        }
        for (i, h) in $p.highway.$iter().enumerate() {
            push!(format!("highway.{i}.transform.w"), h.transform.w);
            push!(format!("highway.{i}.transform.b"), h.transform.b);
            push!(format!("highway.{i}.gate.w"), h.gate.w);
            push!(format!("highway.{i}.gate.b"), h.gate.b);
        }
        push!("enc_fwd.w".to_string(), $p.enc_fwd.w);
        push!("enc_fwd.u".to_string(), $p.enc_fwd.u);
        push!("enc_fwd.b".to_string(), $p.enc_fwd.b);
        push!("enc_bwd.w".to_string(), $p.enc_bwd.w);
        push!("enc_bwd.u".to_string(), $p.enc_bwd.u);
        push!("enc_bwd.b".to_string(), $p.enc_bwd.b);
        for (i, d) in $p.bridge.$iter().enumerate() {
            push!(format!("bridge.{i}.w"), d.w);
            push!(format!("bridge.{i}.b"), d.b);
        }
        push!("tgt_embed".to_string(), $p.tgt_embed);
        for (i, g) in $p.dec.$iter().enumerate() {
            push!(format!("dec.{i}.w"), g.w);
            push!(format!("dec.{i}.u"), g.u);
            push!(format!("dec.{i}.b"), g.b);
        }
        push!("attn.query_w".to_string(), $p.attn.query_w);
        push!("attn.key_w".to_string(), $p.attn.key_w);
        push!("attn.bias".to_string(), $p.attn.bias);
        push!("attn.score_v".to_string(), $p.attn.score_v);
        push!("out.w".to_string(), $p.out.w);
        push!("out.b".to_string(), $p.out.b);
        out
    }};
}

/// Name, shape and flat data of one tensor.
pub type TensorView<'a> = (String, Vec<usize>, &'a [f64]);
pub type TensorViewMut<'a> = (String, Vec<usize>, &'a mut [f64]);

impl Params {
    /// All-zero parameters with the shapes implied by `config` and the
    /// vocabulary sizes.
    pub fn zeros(config: &ModelConfig, src_vocab: usize, tgt_vocab: usize) -> Self {
        let d = config.embed_dim;
        let n = config.conv_output_dim();
        let he = config.encoder_hidden;
        let hd = config.decoder_hidden;
        let enc = config.encoder_state_dim();
        let a = config.attention_dim;
        Self {
            src_embed: Array2::zeros((src_vocab, d)),
            conv: config
                .conv_filter_counts
                .iter()
                .zip(&config.conv_filter_widths)
                .map(|(&count, &width)| Dense::zeros(count, width * d))
                .collect(),
            highway: (0..config.highway_layers)
                .map(|_| Highway {
                    transform: Dense::zeros(n, n),
                    gate: Dense::zeros(n, n),
                })
                .collect(),
            enc_fwd: Gru::zeros(n, he),
            enc_bwd: Gru::zeros(n, he),
            bridge: (0..config.decoder_layers).map(|_| Dense::zeros(hd, enc)).collect(),
            tgt_embed: Array2::zeros((tgt_vocab, d)),
            dec: (0..config.decoder_layers)
                .map(|l| Gru::zeros(if l == 0 { d + enc } else { hd }, hd))
                .collect(),
            attn: Attention {
                query_w: Array2::zeros((a, hd)),
                key_w: Array2::zeros((a, enc)),
                bias: Array1::zeros(a),
                score_v: Array1::zeros(a),
            },
            out: Dense::zeros(tgt_vocab, hd + enc),
        }
    }

    /// Seeded initialization: embeddings uniform in (-1, 1), weight matrices
    /// Glorot-uniform (`±sqrt(6 / (fan_in + fan_out))`), biases zero.
    pub fn init(config: &ModelConfig, src_vocab: usize, tgt_vocab: usize, seed: u64) -> Self {
        let mut p = Self::zeros(config, src_vocab, tgt_vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, shape, data) in p.tensors_mut() {
            let Some(limit) = init_limit(&name, &shape) else {
                continue;
            };
            for v in data.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut p = self.clone();
        p.fill(0.0);
        p
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        tensor_list!(self, iter, as_slice)
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        tensor_list!(self, iter_mut, as_slice_mut)
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.tensors().into_iter().map(|(n, s, _)| (n, s)).collect()
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fill(&mut self, value: f64) {
        for (_, _, data) in self.tensors_mut() {
            data.fill(value);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, _, data) in self.tensors_mut() {
            data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Params) {
        for ((_, _, dst), (_, _, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.2.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// SHA-256 over tensor names, shapes and little-endian values, as hex.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, shape, data) in self.tensors() {
            h.update(name.as_bytes());
            for s in shape {
                h.update((s as u64).to_le_bytes());
            }
            for v in data {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Half-width of the uniform initialization range; `None` for biases.
pub(crate) fn init_limit(name: &str, shape: &[usize]) -> Option<f64> {
    if is_bias(name) {
        return None;
    }
    if name.ends_with("embed") {
        return Some(1.0);
    }
    let (fan_out, fan_in) = match shape {
        [out, inp] => (*out, *inp),
        [n] => (*n, 1),
        _ => unreachable!("parameters are vectors or matrices"),
    };
    Some((6.0 / (fan_in + fan_out) as f64).sqrt())
}

pub(crate) fn is_bias(name: &str) -> bool {
    name.ends_with(".b") || name.ends_with(".bias")
}
