//! Exact gradients of the sentence negative log-likelihood.

use super::linalg::{axpy, dot, log_softmax, matvec_t_acc, outer_acc};
use super::model::{gru_step, GruCache, Params, Seq2SeqModel};
use super::vocab::{BOS, EOS};

struct StepCache {
    prev: u32,
    s_prev: Vec<f64>,
    alpha: Vec<f64>,
    acts: Vec<Vec<f64>>,
    x: Vec<f64>,
    gru: GruCache,
    feat: Vec<f64>,
    probs: Vec<f64>,
    target: u32,
}

/// Backward pass through one GRU step. Accumulates parameter gradients and
/// returns `(dx, dh_prev)`.
#[allow(clippy::too_many_arguments)]
fn gru_backward(
    w: &[f64],
    u: &[f64],
    gw: &mut [f64],
    gu: &mut [f64],
    gb: &mut [f64],
    hidden: usize,
    x: &[f64],
    h_prev: &[f64],
    c: &GruCache,
    dh_next: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let h3 = 3 * hidden;
    let mut dgx = vec![0.0; h3];
    let mut dgh = vec![0.0; h3];
    let mut dh = vec![0.0; hidden];
    for k in 0..hidden {
        let (z, r, n) = (c.z[k], c.r[k], c.n[k]);
        let g = dh_next[k];
        let dn = g * (1.0 - z);
        let dz = g * (h_prev[k] - n);
        dh[k] = g * z;
        let dan = dn * (1.0 - n * n);
        let dr = dan * c.un[k];
        let daz = dz * z * (1.0 - z);
        let dar = dr * r * (1.0 - r);
        dgx[k] = daz;
        dgx[hidden + k] = dar;
        dgx[2 * hidden + k] = dan;
        dgh[k] = daz;
        dgh[hidden + k] = dar;
        dgh[2 * hidden + k] = dan * r;
    }
    axpy(1.0, &dgx, gb);
    outer_acc(gw, &dgx, x);
    outer_acc(gu, &dgh, h_prev);
    let mut dx = vec![0.0; x.len()];
    matvec_t_acc(w, h3, x.len(), &dgx, &mut dx);
    matvec_t_acc(u, h3, hidden, &dgh, &mut dh);
    (dx, dh)
}

impl Seq2SeqModel {
    /// Negative log-likelihood (nats) of `tgt` followed by `</s>` given
    /// `src`; gradients are added into `grad`.
    pub fn loss_and_grad(&self, src: &[u32], tgt: &[u32], grad: &mut Params) -> f64 {
        let d = self.dims;
        let p = &self.params;
        let (hd, cd, ed) = (d.hidden, d.ctx(), d.emb);
        let input = Self::encoder_input(src);
        let n = input.len();
        let mut enc_caches = (Vec::new(), Vec::new());
        let enc = self.encode_with(&input, Some(&mut enc_caches));
        let s0 = self.initial_state(&enc);

        let mut steps: Vec<StepCache> = Vec::with_capacity(tgt.len() + 1);
        let mut s = s0.clone();
        let mut prev = BOS;
        let mut loss = 0.0;
        for &target in tgt.iter().chain(std::iter::once(&EOS)) {
            let (alpha, acts) = self.attend(&enc, &s);
            let c = self.context(&enc, &alpha);
            let e = self.tgt_emb(prev);
            let x = [e, c.as_slice()].concat();
            let mut gru = GruCache::default();
            let mut s_next = Vec::with_capacity(hd);
            gru_step(&p.dec_w, &p.dec_u, &p.dec_b, hd, &x, &s, &mut s_next, Some(&mut gru));
            let (mut logits, feat) = self.readout(&s_next, &c, e);
            log_softmax(&mut logits);
            loss -= logits[target as usize];
            logits.iter_mut().for_each(|l| *l = l.exp());
            steps.push(StepCache {
                prev,
                s_prev: std::mem::replace(&mut s, s_next),
                alpha,
                acts,
                x,
                gru,
                feat,
                probs: logits,
                target,
            });
            prev = target;
        }

        let mut dctx = vec![vec![0.0; cd]; n];
        let mut dpctx = vec![vec![0.0; d.att]; n];
        let mut ds = vec![0.0; hd];
        for st in steps.iter().rev() {
            let mut dlogits = st.probs.clone();
            dlogits[st.target as usize] -= 1.0;
            axpy(1.0, &dlogits, &mut grad.out_b);
            outer_acc(&mut grad.out_w, &dlogits, &st.feat);
            let mut dfeat = vec![0.0; d.readout()];
            matvec_t_acc(&p.out_w, d.tgt_vocab, d.readout(), &dlogits, &mut dfeat);
            axpy(1.0, &dfeat[..hd], &mut ds);
            let mut dc = dfeat[hd..hd + cd].to_vec();
            let mut demb = dfeat[hd + cd..].to_vec();

            let (dx, ds_prev) = gru_backward(
                &p.dec_w,
                &p.dec_u,
                &mut grad.dec_w,
                &mut grad.dec_u,
                &mut grad.dec_b,
                hd,
                &st.x,
                &st.s_prev,
                &st.gru,
                &ds,
            );
            ds = ds_prev;
            axpy(1.0, &dx[..ed], &mut demb);
            axpy(1.0, &dx[ed..], &mut dc);
            let row = st.prev as usize * ed;
            axpy(1.0, &demb, &mut grad.tgt_emb[row..row + ed]);

            // Attention.
            let dalpha: Vec<f64> = enc.ctx.iter().map(|h| dot(&dc, h)).collect();
            for (dcj, &a) in dctx.iter_mut().zip(&st.alpha) {
                axpy(a, &dc, dcj);
            }
            let mean = dot(&st.alpha, &dalpha);
            let mut dq = vec![0.0; d.att];
            for j in 0..n {
                let de = st.alpha[j] * (dalpha[j] - mean);
                if de == 0.0 {
                    continue;
                }
                axpy(de, &st.acts[j], &mut grad.att_v);
                for k in 0..d.att {
                    let a = st.acts[j][k];
                    let dpre = de * p.att_v[k] * (1.0 - a * a);
                    dpctx[j][k] += dpre;
                    dq[k] += dpre;
                }
            }
            outer_acc(&mut grad.att_w, &dq, &st.s_prev);
            matvec_t_acc(&p.att_w, d.att, hd, &dq, &mut ds);
        }

        // Initial state.
        let dpre: Vec<f64> = ds.iter().zip(&s0).map(|(g, s)| g * (1.0 - s * s)).collect();
        axpy(1.0, &dpre, &mut grad.init_b);
        outer_acc(&mut grad.init_w, &dpre, &enc.mean_ctx);
        let mut dmean = vec![0.0; cd];
        matvec_t_acc(&p.init_w, hd, cd, &dpre, &mut dmean);
        for j in 0..n {
            axpy(1.0 / n as f64, &dmean, &mut dctx[j]);
            axpy(1.0, &dpctx[j], &mut grad.att_b);
            outer_acc(&mut grad.att_u, &dpctx[j], &enc.ctx[j]);
            matvec_t_acc(&p.att_u, d.att, cd, &dpctx[j], &mut dctx[j]);
        }

        // Encoder, forward direction.
        let zeros = vec![0.0; hd];
        let mut carry = vec![0.0; hd];
        for j in (0..n).rev() {
            let mut dh = dctx[j][..hd].to_vec();
            axpy(1.0, &carry, &mut dh);
            let h_prev = if j > 0 { &enc.ctx[j - 1][..hd] } else { &zeros[..] };
            let x = self.src_emb(input[j]);
            let (dx, dhp) = gru_backward(
                &p.enc_fw_w,
                &p.enc_fw_u,
                &mut grad.enc_fw_w,
                &mut grad.enc_fw_u,
                &mut grad.enc_fw_b,
                hd,
                x,
                h_prev,
                &enc_caches.0[j],
                &dh,
            );
            carry = dhp;
            let row = input[j] as usize * ed;
            axpy(1.0, &dx, &mut grad.src_emb[row..row + ed]);
        }
        // Backward direction.
        carry.fill(0.0);
        for j in 0..n {
            let mut dh = dctx[j][hd..].to_vec();
            axpy(1.0, &carry, &mut dh);
            let h_prev = if j + 1 < n { &enc.ctx[j + 1][hd..] } else { &zeros[..] };
            let x = self.src_emb(input[j]);
            let (dx, dhp) = gru_backward(
                &p.enc_bw_w,
                &p.enc_bw_u,
                &mut grad.enc_bw_w,
                &mut grad.enc_bw_u,
                &mut grad.enc_bw_b,
                hd,
                x,
                h_prev,
                &enc_caches.1[j],
                &dh,
            );
            carry = dhp;
            let row = input[j] as usize * ed;
            axpy(1.0, &dx, &mut grad.src_emb[row..row + ed]);
        }
        loss
    }

    /// Negative log-likelihood without gradients.
    pub fn loss(&self, src: &[u32], tgt: &[u32]) -> f64 {
        let d = self.dims;
        let enc = self.encode_with(&Self::encoder_input(src), None);
        let mut s = self.initial_state(&enc);
        let mut prev = BOS;
        let mut loss = 0.0;
        for &target in tgt.iter().chain(std::iter::once(&EOS)) {
            let (alpha, _) = self.attend(&enc, &s);
            let c = self.context(&enc, &alpha);
            let e = self.tgt_emb(prev);
            let x = [e, c.as_slice()].concat();
            let mut s_next = Vec::with_capacity(d.hidden);
            gru_step(&self.params.dec_w, &self.params.dec_u, &self.params.dec_b, d.hidden, &x, &s, &mut s_next, None);
            let (mut logits, _) = self.readout(&s_next, &c, e);
            log_softmax(&mut logits);
            loss -= logits[target as usize];
            s = s_next;
            prev = target;
        }
        loss
    }
}
