use rand::Rng;

use super::linalg::{dot, log_softmax, matvec, matvec_acc, sigmoid, softmax};
use super::vocab::{Vocab, BOS, EOS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub emb: usize,
    pub hidden: usize,
    pub att: usize,
}

impl Dims {
    pub fn ctx(&self) -> usize {
        2 * self.hidden
    }

    /// Width of the vector fed to the output projection: `[s; c; e]`.
    pub fn readout(&self) -> usize {
        self.hidden + self.ctx() + self.emb
    }
}

macro_rules! params {
    ($($name:ident),* $(,)?) => {
        /// All trainable tensors, row-major.
        #[derive(Debug, Clone, PartialEq)]
        pub struct Params {
            $(pub $name: Vec<f64>,)*
        }

        impl Params {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
                vec![$((stringify!($name), self.$name.as_slice())),*]
            }

            pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
                let Params { $($name),* } = self;
                vec![$((stringify!($name), $name.as_mut_slice())),*]
            }
        }
    };
}

params!(
    src_emb, tgt_emb, enc_fw_w, enc_fw_u, enc_fw_b, enc_bw_w, enc_bw_u, enc_bw_b, init_w, init_b,
    dec_w, dec_u, dec_b, att_w, att_u, att_b, att_v, out_w, out_b,
);

impl Params {
    /// `(rows, cols)` of every tensor, in [`Params::NAMES`] order.
    pub fn shapes(d: &Dims) -> Vec<(usize, usize)> {
        let h3 = 3 * d.hidden;
        vec![
            (d.src_vocab, d.emb),
            (d.tgt_vocab, d.emb),
            (h3, d.emb),
            (h3, d.hidden),
            (h3, 1),
            (h3, d.emb),
            (h3, d.hidden),
            (h3, 1),
            (d.hidden, d.ctx()),
            (d.hidden, 1),
            (h3, d.emb + d.ctx()),
            (h3, d.hidden),
            (h3, 1),
            (d.att, d.hidden),
            (d.att, d.ctx()),
            (d.att, 1),
            (d.att, 1),
            (d.tgt_vocab, d.readout()),
            (d.tgt_vocab, 1),
        ]
    }

    pub fn zeros(d: &Dims) -> Self {
        let mut p = Params::empty();
        for ((_, t), (r, c)) in p.tensors_mut_vecs().into_iter().zip(Self::shapes(d)) {
            *t = vec![0.0; r * c];
        }
        p
    }

    fn empty() -> Self {
        Params {
            src_emb: Vec::new(),
            tgt_emb: Vec::new(),
            enc_fw_w: Vec::new(),
            enc_fw_u: Vec::new(),
            enc_fw_b: Vec::new(),
            enc_bw_w: Vec::new(),
            enc_bw_u: Vec::new(),
            enc_bw_b: Vec::new(),
            init_w: Vec::new(),
            init_b: Vec::new(),
            dec_w: Vec::new(),
            dec_u: Vec::new(),
            dec_b: Vec::new(),
            att_w: Vec::new(),
            att_u: Vec::new(),
            att_b: Vec::new(),
            att_v: Vec::new(),
            out_w: Vec::new(),
            out_b: Vec::new(),
        }
    }

    fn tensors_mut_vecs(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        let Params {
            src_emb,
            tgt_emb,
            enc_fw_w,
            enc_fw_u,
            enc_fw_b,
            enc_bw_w,
            enc_bw_u,
            enc_bw_b,
            init_w,
            init_b,
            dec_w,
            dec_u,
            dec_b,
            att_w,
            att_u,
            att_b,
            att_v,
            out_w,
            out_b,
        } = self;
        Self::NAMES
            .iter()
            .copied()
            .zip([
                src_emb, tgt_emb, enc_fw_w, enc_fw_u, enc_fw_b, enc_bw_w, enc_bw_u, enc_bw_b, init_w,
                init_b, dec_w, dec_u, dec_b, att_w, att_u, att_b, att_v, out_w, out_b,
            ])
            .collect()
    }

    /// Glorot-uniform matrices, small uniform embeddings, zero biases.
    pub fn random<R: Rng>(d: &Dims, rng: &mut R) -> Self {
        let mut p = Params::zeros(d);
        for ((name, t), (r, c)) in p.tensors_mut().into_iter().zip(Self::shapes(d)) {
            if c == 1 && name != "att_v" {
                continue;
            }
            let scale = if name.ends_with("_emb") {
                0.1
            } else {
                (6.0 / (r + c) as f64).sqrt()
            };
            for x in t.iter_mut() {
                *x = rng.gen_range(-scale..scale);
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fill(&mut self, v: f64) {
        for (_, t) in self.tensors_mut() {
            t.fill(v);
        }
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &Params) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (_, t) in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= k;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// Attentional encoder-decoder: bidirectional GRU encoder, GRU decoder fed
/// with the previous target embedding and the attention context, additive
/// attention, and a single output projection over `[s; c; e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    pub dims: Dims,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub params: Params,
}

/// Encoder output for one source sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    /// Annotation vectors `[fw; bw]`, one per source position (incl. `</s>`).
    pub ctx: Vec<Vec<f64>>,
    /// `U_a ctx_j + b_a`, cached for attention.
    pub pctx: Vec<Vec<f64>>,
    /// Mean annotation, input to the initial decoder state.
    pub mean_ctx: Vec<f64>,
}

/// One decoder step's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub log_probs: Vec<f64>,
    pub state: Vec<f64>,
    pub attention: Vec<f64>,
}

/// Intermediate values of one GRU step, kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub(crate) struct GruCache {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    /// `U_n h` before the reset gate.
    pub un: Vec<f64>,
}

pub(crate) fn gru_step(
    w: &[f64],
    u: &[f64],
    b: &[f64],
    hidden: usize,
    x: &[f64],
    h: &[f64],
    out: &mut Vec<f64>,
    cache: Option<&mut GruCache>,
) {
    let h3 = 3 * hidden;
    let mut gx = b.to_vec();
    matvec_acc(w, h3, x.len(), x, &mut gx);
    let mut gh = vec![0.0; h3];
    matvec(u, h3, hidden, h, &mut gh);
    let mut z = vec![0.0; hidden];
    let mut r = vec![0.0; hidden];
    let mut n = vec![0.0; hidden];
    out.clear();
    for k in 0..hidden {
        z[k] = sigmoid(gx[k] + gh[k]);
        r[k] = sigmoid(gx[hidden + k] + gh[hidden + k]);
        n[k] = (gx[2 * hidden + k] + r[k] * gh[2 * hidden + k]).tanh();
        out.push((1.0 - z[k]) * n[k] + z[k] * h[k]);
    }
    if let Some(c) = cache {
        c.un = gh[2 * hidden..].to_vec();
        c.z = z;
        c.r = r;
        c.n = n;
    }
}

impl Seq2SeqModel {
    pub fn new<R: Rng>(src_vocab: Vocab, tgt_vocab: Vocab, emb: usize, hidden: usize, rng: &mut R) -> Self {
        let dims = Dims {
            src_vocab: src_vocab.len(),
            tgt_vocab: tgt_vocab.len(),
            emb,
            hidden,
            att: hidden,
        };
        Seq2SeqModel {
            params: Params::random(&dims, rng),
            dims,
            src_vocab,
            tgt_vocab,
        }
    }

    pub(crate) fn check_ids(&self, src: &[u32], tgt: &[u32]) -> Result<()> {
        if let Some(&bad) = src.iter().find(|&&i| i as usize >= self.dims.src_vocab) {
            return Err(Error::Input(format!("source id {bad} out of range")));
        }
        if let Some(&bad) = tgt.iter().find(|&&i| i as usize >= self.dims.tgt_vocab) {
            return Err(Error::Input(format!("target id {bad} out of range")));
        }
        Ok(())
    }

    /// Source ids with `</s>` appended, as fed to the encoder.
    pub(crate) fn encoder_input(src: &[u32]) -> Vec<u32> {
        let mut s = src.to_vec();
        s.push(EOS);
        s
    }

    fn emb<'a>(table: &'a [f64], dim: usize, id: u32) -> &'a [f64] {
        &table[id as usize * dim..(id as usize + 1) * dim]
    }

    pub(crate) fn src_emb(&self, id: u32) -> &[f64] {
        Self::emb(&self.params.src_emb, self.dims.emb, id)
    }

    pub(crate) fn tgt_emb(&self, id: u32) -> &[f64] {
        Self::emb(&self.params.tgt_emb, self.dims.emb, id)
    }

    /// Runs both encoder directions; `caches` receives per-position GRU
    /// intermediates `(forward, backward)` when given.
    pub(crate) fn encode_with(
        &self,
        input: &[u32],
        mut caches: Option<&mut (Vec<GruCache>, Vec<GruCache>)>,
    ) -> Encoded {
        let d = &self.dims;
        let p = &self.params;
        let n = input.len();
        let mut fw = vec![vec![0.0; d.hidden]; n];
        let mut bw = vec![vec![0.0; d.hidden]; n];
        if let Some(c) = caches.as_deref_mut() {
            c.0 = vec![GruCache::default(); n];
            c.1 = vec![GruCache::default(); n];
        }
        let mut h = vec![0.0; d.hidden];
        let mut out = Vec::with_capacity(d.hidden);
        for j in 0..n {
            let cache = caches.as_deref_mut().map(|c| &mut c.0[j]);
            gru_step(&p.enc_fw_w, &p.enc_fw_u, &p.enc_fw_b, d.hidden, self.src_emb(input[j]), &h, &mut out, cache);
            std::mem::swap(&mut h, &mut out);
            fw[j].copy_from_slice(&h);
        }
        h.iter_mut().for_each(|x| *x = 0.0);
        for j in (0..n).rev() {
            let cache = caches.as_deref_mut().map(|c| &mut c.1[j]);
            gru_step(&p.enc_bw_w, &p.enc_bw_u, &p.enc_bw_b, d.hidden, self.src_emb(input[j]), &h, &mut out, cache);
            std::mem::swap(&mut h, &mut out);
            bw[j].copy_from_slice(&h);
        }
        let ctx: Vec<Vec<f64>> = fw.into_iter().zip(bw).map(|(f, b)| [f, b].concat()).collect();
        let mut mean_ctx = vec![0.0; d.ctx()];
        for c in &ctx {
            for (m, x) in mean_ctx.iter_mut().zip(c) {
                *m += x;
            }
        }
        mean_ctx.iter_mut().for_each(|m| *m /= n as f64);
        let pctx = ctx
            .iter()
            .map(|c| {
                let mut v = p.att_b.clone();
                matvec_acc(&p.att_u, d.att, d.ctx(), c, &mut v);
                v
            })
            .collect();
        Encoded { ctx, pctx, mean_ctx }
    }

    /// Encodes a source id sequence (without `</s>`; it is appended here).
    pub fn encode(&self, src: &[u32]) -> Result<Encoded> {
        self.check_ids(src, &[])?;
        Ok(self.encode_with(&Self::encoder_input(src), None))
    }

    pub fn initial_state(&self, enc: &Encoded) -> Vec<f64> {
        let d = &self.dims;
        let mut s = self.params.init_b.clone();
        matvec_acc(&self.params.init_w, d.hidden, d.ctx(), &enc.mean_ctx, &mut s);
        s.iter_mut().for_each(|x| *x = x.tanh());
        s
    }

    /// Attention weights and pre-activations `tanh(W_a s + pctx_j)`.
    pub(crate) fn attend(&self, enc: &Encoded, s_prev: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = &self.dims;
        let p = &self.params;
        let mut q = vec![0.0; d.att];
        matvec(&p.att_w, d.att, d.hidden, s_prev, &mut q);
        let mut scores = Vec::with_capacity(enc.pctx.len());
        let mut acts = Vec::with_capacity(enc.pctx.len());
        for pc in &enc.pctx {
            let t: Vec<f64> = pc.iter().zip(&q).map(|(a, b)| (a + b).tanh()).collect();
            scores.push(dot(&p.att_v, &t));
            acts.push(t);
        }
        softmax(&mut scores);
        (scores, acts)
    }

    pub(crate) fn context(&self, enc: &Encoded, alpha: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.dims.ctx()];
        for (a, h) in alpha.iter().zip(&enc.ctx) {
            for (ci, hi) in c.iter_mut().zip(h) {
                *ci += a * hi;
            }
        }
        c
    }

    /// Logits over the target vocabulary from `[s; c; e]`.
    pub(crate) fn readout(&self, s: &[f64], c: &[f64], e: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = &self.dims;
        let feat = [s, c, e].concat();
        let mut logits = self.params.out_b.clone();
        matvec_acc(&self.params.out_w, d.tgt_vocab, d.readout(), &feat, &mut logits);
        (logits, feat)
    }

    /// Consumes `y_prev` in decoder state `s_prev`: returns the distribution
    /// over the next token and the new state.
    pub fn step(&self, enc: &Encoded, s_prev: &[f64], y_prev: u32) -> StepOutput {
        let d = &self.dims;
        let p = &self.params;
        let (alpha, _) = self.attend(enc, s_prev);
        let c = self.context(enc, &alpha);
        let e = self.tgt_emb(y_prev);
        let x = [e, c.as_slice()].concat();
        let mut s = Vec::with_capacity(d.hidden);
        gru_step(&p.dec_w, &p.dec_u, &p.dec_b, d.hidden, &x, s_prev, &mut s, None);
        let (mut logits, _) = self.readout(&s, &c, e);
        log_softmax(&mut logits);
        StepOutput {
            log_probs: logits,
            state: s,
            attention: alpha,
        }
    }

    /// Next-token log-distribution after `tgt_prefix`, plus that step's
    /// attention weights.
    pub fn forward(&self, src: &[u32], tgt_prefix: &[u32]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_ids(src, tgt_prefix)?;
        let enc = self.encode_with(&Self::encoder_input(src), None);
        let mut state = self.initial_state(&enc);
        let mut prev = BOS;
        for &y in tgt_prefix {
            state = self.step(&enc, &state, prev).state;
            prev = y;
        }
        let out = self.step(&enc, &state, prev);
        Ok((out.log_probs, out.attention))
    }

    /// Greedy decoding up to `max_len` tokens (excluding `</s>`).
    pub fn greedy(&self, src: &[u32], max_len: usize) -> Result<Vec<u32>> {
        let enc = self.encode(src)?;
        let mut state = self.initial_state(&enc);
        let mut prev = BOS;
        let mut out = Vec::new();
        while out.len() < max_len {
            let step = self.step(&enc, &state, prev);
            let best = step
                .log_probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i as u32)
                .unwrap();
            if best == EOS {
                break;
            }
            out.push(best);
            state = step.state;
            prev = best;
        }
        Ok(out)
    }
}
