//! Network building blocks on top of [`Graph`]: LSTM cell and BiLSTM,
//! character convolution with max-pooling, dense layers and a small
//! transformer encoder.
//!
//! Each block owns [`ParamId`]s registered in a [`ParamStore`] under a name
//! prefix, so two blocks of the same kind need distinct prefixes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Softmax,
}

pub fn activate(g: &mut Graph, x: Var, act: Activation) -> Var {
    match act {
        Activation::Identity => x,
        Activation::Tanh => g.tanh(x),
        Activation::Relu => g.relu(x),
        Activation::Softmax => g.softmax_rows(x),
    }
}

/// Affine map `x W + b` followed by an activation.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub activation: Activation,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            w: store.add_glorot(format!("{name}.w"), input, output, rng),
            b: store.add_zeros(format!("{name}.b"), 1, output),
            activation,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        dense(g, x, self.w, self.b, self.activation)
    }
}

pub fn dense(g: &mut Graph, x: Var, w: ParamId, b: ParamId, act: Activation) -> Result<Var> {
    let w = g.param(w);
    let b = g.param(b);
    let xw = g.matmul(x, w)?;
    let y = g.add_row(xw, b)?;
    Ok(activate(g, y, act))
}

/// LSTM weights with gates packed as `[i | f | o | g]` along columns:
/// `w` is `input x 4h`, `u` is `h x 4h`, `b` is `1 x 4h`.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmParams {
    /// Glorot weights, zero biases except the forget gate at +1.
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add_glorot(format!("{name}.w"), input, 4 * hidden, rng);
        let u = store.add_glorot(format!("{name}.u"), hidden, 4 * hidden, rng);
        let mut bias = Tensor::zeros(1, 4 * hidden);
        for j in hidden..2 * hidden {
            bias.set(0, j, 1.0);
        }
        let b = store.add(format!("{name}.b"), bias, true);
        LstmParams { w, u, b, hidden }
    }

    pub fn param_count(input: usize, hidden: usize) -> usize {
        4 * (input * hidden + hidden * hidden + hidden)
    }
}

/// One gated update from already-projected input `xw = x W + b` (`1 x 4h`).
fn lstm_gates(g: &mut Graph, xw: Var, h: Var, c: Var, u: Var, hidden: usize) -> Result<(Var, Var)> {
    let hu = g.matmul(h, u)?;
    let z = g.add(xw, hu)?;
    let i = g.slice_cols(z, 0, hidden)?;
    let f = g.slice_cols(z, hidden, 2 * hidden)?;
    let o = g.slice_cols(z, 2 * hidden, 3 * hidden)?;
    let cand = g.slice_cols(z, 3 * hidden, 4 * hidden)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let o = g.sigmoid(o);
    let cand = g.tanh(cand);
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, cand)?;
    let c_next = g.add(fc, ig)?;
    let tc = g.tanh(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// `i, f, o = σ(·)`, `g = tanh(·)`, `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_cell_step(g: &mut Graph, x: Var, h: Var, c: Var, p: &LstmParams) -> Result<(Var, Var)> {
    let w = g.param(p.w);
    let b = g.param(p.b);
    let u = g.param(p.u);
    let xw = g.matmul(x, w)?;
    let xw = g.add_row(xw, b)?;
    lstm_gates(g, xw, h, c, u, p.hidden)
}

/// Runs one direction over `seq` (`L x d`) from zero state and returns the
/// hidden states in input order (`L x h`). `recurrent_dropout` masks the
/// hidden state fed to `U` with one mask per sequence (train mode only).
pub fn lstm_sequence(g: &mut Graph, seq: Var, p: &LstmParams, reverse: bool, recurrent_dropout: f64) -> Result<Var> {
    let (len, _) = g.shape(seq);
    if len == 0 {
        return Err(Error::Invalid("lstm over empty sequence".into()));
    }
    let w = g.param(p.w);
    let b = g.param(p.b);
    let u = g.param(p.u);
    let xw = g.matmul(seq, w)?;
    let xw = g.add_row(xw, b)?;
    let mask = (g.is_train() && recurrent_dropout > 0.0).then(|| g.dropout_mask(p.hidden, recurrent_dropout));

    let mut h = g.input(Tensor::zeros(1, p.hidden));
    let mut c = g.input(Tensor::zeros(1, p.hidden));
    let mut outs = vec![h; len];
    let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
    for t in order {
        let xt = g.slice_rows(xw, t, t + 1)?;
        let h_in = match &mask {
            Some(m) => g.mul_const(h, m.clone())?,
            None => h,
        };
        (h, c) = lstm_gates(g, xt, h_in, c, u, p.hidden)?;
        outs[t] = h;
    }
    g.concat_rows(&outs)
}

/// Forward and backward LSTMs over `seq`; row `t` is `[fwd_t | bwd_t]`.
pub fn bilstm(g: &mut Graph, seq: Var, fwd: &LstmParams, bwd: &LstmParams, recurrent_dropout: f64) -> Result<Var> {
    let f = lstm_sequence(g, seq, fwd, false, recurrent_dropout)?;
    let b = lstm_sequence(g, seq, bwd, true, recurrent_dropout)?;
    g.concat_cols(&[f, b])
}

/// Width-`w` character filters, `SAME` zero padding, max over positions.
#[derive(Clone, Copy, Debug)]
pub struct CharCnn {
    /// `(w * char_dim) x filters`
    pub w: ParamId,
    pub b: ParamId,
    pub width: usize,
    pub activation: Activation,
}

impl CharCnn {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        char_dim: usize,
        width: usize,
        filters: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        CharCnn {
            w: store.add_glorot(format!("{name}.w"), width * char_dim, filters, rng),
            b: store.add_zeros(format!("{name}.b"), 1, filters),
            width,
            activation,
        }
    }

    /// `char_embeds` stacks `n` tokens of `chars_per_token` rows each;
    /// returns `n x filters`.
    pub fn forward(&self, g: &mut Graph, char_embeds: Var, chars_per_token: usize) -> Result<Var> {
        char_cnn(g, char_embeds, chars_per_token, self)
    }
}

pub fn char_cnn(g: &mut Graph, char_embeds: Var, chars_per_token: usize, p: &CharCnn) -> Result<Var> {
    let left = (p.width - 1) / 2;
    let right = p.width - 1 - left;
    let windows = g.unfold(char_embeds, chars_per_token, p.width, left, right)?;
    let w = g.param(p.w);
    let b = g.param(p.b);
    let conv = g.matmul(windows, w)?;
    let conv = g.add_row(conv, b)?;
    let conv = activate(g, conv, p.activation);
    g.max_rows(conv, chars_per_token)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub n_segments: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.hidden.is_multiple_of(self.n_heads) {
            return Err(Error::Invalid(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.n_heads
            )));
        }
        if self.vocab_size < 2 || self.max_len == 0 || self.n_segments == 0 {
            return Err(Error::Invalid("encoder sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    ln1: (ParamId, ParamId),
    ff1: Dense,
    ff2: Dense,
    ln2: (ParamId, ParamId),
}

/// Token + position + segment embeddings followed by post-norm
/// self-attention blocks.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    tok: ParamId,
    pos: ParamId,
    seg: ParamId,
    emb_ln: (ParamId, ParamId),
    layers: Vec<EncoderLayer>,
}

pub struct EncoderOutput {
    /// `L x hidden`; rows of masked positions are zero.
    pub sequence: Var,
    /// Output at position 0.
    pub pooled: Var,
    /// Attention weights per layer and head, over unmasked positions only.
    pub attention: Vec<Tensor>,
}

fn small_uniform(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

fn layer_norm_params(store: &mut ParamStore, name: &str, dim: usize) -> (ParamId, ParamId) {
    let gamma = store.add(format!("{name}.gamma"), Tensor::filled(1, dim, 1.0), true);
    let beta = store.add_zeros(format!("{name}.beta"), 1, dim);
    (gamma, beta)
}

impl EncoderParams {
    pub fn new(store: &mut ParamStore, name: &str, config: EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let mut tok = small_uniform(config.vocab_size, h, 0.1, rng);
        tok.data_mut()[..h].fill(0.0);
        let tok = store.add(format!("{name}.tok"), tok, true);
        let pos = store.add(format!("{name}.pos"), small_uniform(config.max_len, h, 0.1, rng), true);
        let seg = store.add(format!("{name}.seg"), small_uniform(config.n_segments, h, 0.1, rng), true);
        let emb_ln = layer_norm_params(store, &format!("{name}.emb_ln"), h);
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("{name}.layer{l}");
            let id = Activation::Identity;
            layers.push(EncoderLayer {
                q: Dense::new(store, &format!("{p}.q"), h, h, id, rng),
                k: Dense::new(store, &format!("{p}.k"), h, h, id, rng),
                v: Dense::new(store, &format!("{p}.v"), h, h, id, rng),
                o: Dense::new(store, &format!("{p}.o"), h, h, id, rng),
                ln1: layer_norm_params(store, &format!("{p}.ln1"), h),
                ff1: Dense::new(store, &format!("{p}.ff1"), h, config.ffn_dim, Activation::Relu, rng),
                ff2: Dense::new(store, &format!("{p}.ff2"), config.ffn_dim, h, id, rng),
                ln2: layer_norm_params(store, &format!("{p}.ln2"), h),
            });
        }
        Ok(EncoderParams {
            config,
            tok,
            pos,
            seg,
            emb_ln,
            layers,
        })
    }
}

const LN_EPS: f64 = 1e-6;

/// Contextual vectors for `token_ids`. `attention_mask[i] == false` marks a
/// padding position: it is dropped before attention, so it neither attends
/// nor is attended to, and its output row is zero.
pub fn transformer_encode(
    g: &mut Graph,
    token_ids: &[usize],
    segment_ids: &[usize],
    attention_mask: &[bool],
    p: &EncoderParams,
) -> Result<EncoderOutput> {
    let len = token_ids.len();
    let cfg = &p.config;
    if len > cfg.max_len {
        return Err(Error::range("sequence length", len, cfg.max_len));
    }
    if segment_ids.len() != len || attention_mask.len() != len {
        return Err(Error::Shape {
            op: "transformer_encode",
            left: vec![len],
            right: vec![segment_ids.len(), attention_mask.len()],
        });
    }
    let keep: Vec<usize> = (0..len).filter(|&i| attention_mask[i]).collect();
    if keep.is_empty() {
        return Err(Error::Invalid("transformer input has no unmasked positions".into()));
    }
    let ids: Vec<usize> = keep.iter().map(|&i| token_ids[i]).collect();
    let segs: Vec<usize> = keep.iter().map(|&i| segment_ids[i]).collect();

    let tok = g.param(p.tok);
    let pos = g.param(p.pos);
    let seg = g.param(p.seg);
    let e_tok = g.gather(tok, &ids, true)?;
    let e_pos = g.gather(pos, &keep, false)?;
    let e_seg = g.gather(seg, &segs, false)?;
    let x = g.add(e_tok, e_pos)?;
    let x = g.add(x, e_seg)?;
    let (lg, lb) = (g.param(p.emb_ln.0), g.param(p.emb_ln.1));
    let mut x = g.layer_norm(x, lg, lb, LN_EPS)?;

    let heads = cfg.n_heads;
    let dh = cfg.hidden / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut attention = Vec::new();
    for layer in &p.layers {
        let q = layer.q.forward(g, x)?;
        let k = layer.k.forward(g, x)?;
        let v = layer.v.forward(g, x)?;
        let mut head_out = Vec::with_capacity(heads);
        for hd in 0..heads {
            let (a, b) = (hd * dh, (hd + 1) * dh);
            let qh = g.slice_cols(q, a, b)?;
            let kh = g.slice_cols(k, a, b)?;
            let vh = g.slice_cols(v, a, b)?;
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax_rows(scores);
            attention.push(g.value(weights).clone());
            head_out.push(g.matmul(weights, vh)?);
        }
        let att = g.concat_cols(&head_out)?;
        let att = layer.o.forward(g, att)?;
        let res = g.add(x, att)?;
        let (g1, b1) = (g.param(layer.ln1.0), g.param(layer.ln1.1));
        let x1 = g.layer_norm(res, g1, b1, LN_EPS)?;
        let ff = layer.ff1.forward(g, x1)?;
        let ff = layer.ff2.forward(g, ff)?;
        let res = g.add(x1, ff)?;
        let (g2, b2) = (g.param(layer.ln2.0), g.param(layer.ln2.1));
        x = g.layer_norm(res, g2, b2, LN_EPS)?;
    }

    let pooled = g.slice_rows(x, 0, 1)?;
    let sequence = if keep.len() == len {
        x
    } else {
        // scatter the compact rows back to their positions
        let mut place = Tensor::zeros(len, keep.len());
        for (j, &i) in keep.iter().enumerate() {
            place.set(i, j, 1.0);
        }
        let place = g.input(place);
        g.matmul(place, x)?
    };
    Ok(EncoderOutput {
        sequence,
        pooled,
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn zero_lstm_is_zero() {
        let mut store = ParamStore::new();
        let p = LstmParams {
            w: store.add_zeros("w", 2, 12),
            u: store.add_zeros("u", 3, 12),
            b: store.add_zeros("b", 1, 12),
            hidden: 3,
        };
        let mut g = Graph::new(&store, false, 0);
        let x = g.input(Tensor::zeros(1, 2));
        let h = g.input(Tensor::zeros(1, 3));
        let c = g.input(Tensor::zeros(1, 3));
        let (h2, c2) = lstm_cell_step(&mut g, x, h, c, &p).unwrap();
        assert!(g.value(h2).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c2).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_keep_memory() {
        let mut store = ParamStore::new();
        let mut b = Tensor::zeros(1, 8);
        for j in 0..2 {
            b.set(0, j, -50.0); // input gate closed
            b.set(0, 2 + j, 50.0); // forget gate open
        }
        let mut r = rng();
        let p = LstmParams {
            w: store.add_glorot("w", 2, 8, &mut r),
            u: store.add_glorot("u", 2, 8, &mut r),
            b: store.add("b", b, true),
            hidden: 2,
        };
        let mut g = Graph::new(&store, false, 0);
        let x = g.input(Tensor::row(vec![0.3, -0.7]));
        let h = g.input(Tensor::row(vec![0.1, 0.2]));
        let c = g.input(Tensor::row(vec![1.5, -2.0]));
        let (_, c2) = lstm_cell_step(&mut g, x, h, c, &p).unwrap();
        for (a, b) in g.value(c2).data().iter().zip([1.5, -2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_param_count() {
        let mut store = ParamStore::new();
        LstmParams::new(&mut store, "l", 5, 3, &mut rng());
        assert_eq!(store.trainable_count(), LstmParams::param_count(5, 3));
        assert_eq!(LstmParams::param_count(5, 3), 4 * (15 + 9 + 3));
    }

    #[test]
    fn bilstm_single_step_and_width() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let f = LstmParams::new(&mut store, "f", 2, 3, &mut r);
        let b = LstmParams::new(&mut store, "b", 2, 3, &mut r);
        let mut g = Graph::new(&store, false, 0);
        let x = g.input(Tensor::row(vec![0.5, -0.5]));
        let out = bilstm(&mut g, x, &f, &b, 0.0).unwrap();
        assert_eq!(g.shape(out), (1, 6));
        let h0 = g.input(Tensor::zeros(1, 3));
        let c0 = g.input(Tensor::zeros(1, 3));
        let (hf, _) = lstm_cell_step(&mut g, x, h0, c0, &f).unwrap();
        let (hb, _) = lstm_cell_step(&mut g, x, h0, c0, &b).unwrap();
        assert_eq!(&g.value(out).data()[..3], g.value(hf).data());
        assert_eq!(&g.value(out).data()[3..], g.value(hb).data());

        let empty = g.input(Tensor::zeros(0, 2));
        assert!(bilstm(&mut g, empty, &f, &b, 0.0).is_err());
    }

    #[test]
    fn bilstm_palindrome_symmetry() {
        let mut store = ParamStore::new();
        let p = LstmParams::new(&mut store, "tied", 2, 3, &mut rng());
        let mut g = Graph::new(&store, false, 0);
        let x = g.input(Tensor::from_rows(&[vec![0.2, 0.9], vec![-0.4, 0.1], vec![0.2, 0.9]]).unwrap());
        let out = bilstm(&mut g, x, &p, &p, 0.0).unwrap();
        let v = g.value(out);
        for t in 0..3 {
            let row = v.row_slice(t);
            let mirror = v.row_slice(2 - t);
            assert_eq!(&row[..3], &mirror[3..]);
            assert_eq!(&row[3..], &mirror[..3]);
        }
    }

    #[test]
    fn averaging_filter_on_constant_input() {
        let mut store = ParamStore::new();
        let p = CharCnn {
            w: store.add("w", Tensor::filled(3, 1, 1.0 / 3.0), true),
            b: store.add_zeros("b", 1, 1),
            width: 3,
            activation: Activation::Identity,
        };
        let mut g = Graph::new(&store, false, 0);
        let x = g.input(Tensor::filled(5, 1, 0.8));
        let out = char_cnn(&mut g, x, 5, &p).unwrap();
        assert!((g.value(out).as_scalar() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn reversed_kernel_gives_same_window_scores() {
        // width-3 asymmetric kernel over 4 scalar chars, no padding
        let chars = [1.0, 4.0, 2.0, 8.0];
        let k = [1.0, 2.0, -1.0];
        let score = |c: &[f64], k: &[f64]| -> Vec<f64> { c.windows(3).map(|w| w.iter().zip(k).map(|(a, b)| a * b).sum()).collect() };
        let fwd = score(&chars, &k);
        let rev_chars: Vec<f64> = chars.iter().rev().copied().collect();
        let rev_k: Vec<f64> = k.iter().rev().copied().collect();
        let mut a = fwd.clone();
        let mut b = score(&rev_chars, &rev_k);
        assert_ne!(fwd, score(&rev_chars, &k));
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);

        let mut store = ParamStore::new();
        let cnn = |store: &mut ParamStore, name: &str, k: &[f64]| CharCnn {
            w: store.add(format!("{name}.w"), Tensor::matrix(3, 1, k.to_vec()).unwrap(), true),
            b: store.add_zeros(format!("{name}.b"), 1, 1),
            width: 3,
            activation: Activation::Identity,
        };
        let p1 = cnn(&mut store, "a", &k);
        let p2 = cnn(&mut store, "b", &rev_k);
        let mut g = Graph::new(&store, false, 0);
        let x1 = g.input(Tensor::matrix(4, 1, chars.to_vec()).unwrap());
        let x2 = g.input(Tensor::matrix(4, 1, rev_chars).unwrap());
        let m1 = char_cnn(&mut g, x1, 4, &p1).unwrap();
        let m2 = char_cnn(&mut g, x2, 4, &p2).unwrap();
        assert_eq!(g.value(m1).as_scalar(), g.value(m2).as_scalar());
    }

    #[test]
    fn dense_identity_and_softmax() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::identity(3), true);
        let b = store.add_zeros("b", 1, 3);
        let mut g = Graph::new(&store, false, 0);
        let x = g.input(Tensor::row(vec![1.0, -2.0, 0.5]));
        let y = dense(&mut g, x, w, b, Activation::Identity).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -2.0, 0.5]);
        let s = dense(&mut g, x, w, b, Activation::Softmax).unwrap();
        assert!((g.value(s).data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn encoder(store: &mut ParamStore, heads: usize) -> EncoderParams {
        let cfg = EncoderConfig {
            vocab_size: 12,
            hidden: 8,
            n_layers: 2,
            n_heads: heads,
            ffn_dim: 16,
            max_len: 10,
            n_segments: 2,
        };
        EncoderParams::new(store, "enc", cfg, &mut rng()).unwrap()
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut store = ParamStore::new();
        let p = encoder(&mut store, 2);
        let mut g = Graph::new(&store, false, 0);
        let out = transformer_encode(&mut g, &[2, 5, 7, 0], &[0, 0, 1, 0], &[true, true, true, false], &p).unwrap();
        assert_eq!(out.attention.len(), 4);
        for a in &out.attention {
            assert_eq!(a.shape(), &[3, 3]);
            for r in 0..3 {
                assert!((a.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!(g.value(out.sequence).row_slice(3).iter().all(|&v| v == 0.0));
        assert_eq!(g.value(out.pooled).data(), g.value(out.sequence).row_slice(0));
    }

    #[test]
    fn padding_values_do_not_leak() {
        let mut store = ParamStore::new();
        let p = encoder(&mut store, 4);
        let mask = [true, true, true, false, false];
        let run = |ids: &[usize], segs: &[usize]| {
            let mut g = Graph::new(&store, false, 0);
            let out = transformer_encode(&mut g, ids, segs, &mask, &p).unwrap();
            g.value(out.sequence).data()[..3 * 8].to_vec()
        };
        let a = run(&[3, 4, 5, 0, 0], &[0, 0, 1, 0, 0]);
        let b = run(&[3, 4, 5, 9, 11], &[0, 0, 1, 1, 0]);
        let c = run(&[3, 4, 5, 11, 9], &[0, 0, 1, 0, 1]);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn single_position_attention_is_identity_weighted() {
        let mut store = ParamStore::new();
        let p = encoder(&mut store, 2);
        let mut g = Graph::new(&store, false, 0);
        let out = transformer_encode(&mut g, &[6, 0, 0], &[0, 0, 0], &[true, false, false], &p).unwrap();
        assert!(out.attention.iter().all(|a| a.data() == [1.0]));
    }

    #[test]
    fn encoder_rejects_long_input() {
        let mut store = ParamStore::new();
        let p = encoder(&mut store, 2);
        let mut g = Graph::new(&store, false, 0);
        let ids = vec![2; 11];
        assert!(transformer_encode(&mut g, &ids, &[0; 11], &[true; 11], &p).is_err());
        assert!(EncoderConfig { n_heads: 3, ..p.config }.validate().is_err());
    }
}
