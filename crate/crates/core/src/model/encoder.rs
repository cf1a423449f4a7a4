//! Transcription network: token embedding followed by a stack of either
//! windowed self-attention layers or bidirectional GRU layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gru::{GruParams, GruStep};
use super::tensor::{add_into, dot, Mat};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Attention,
    Bigru,
}

/// Multi-head self-attention restricted to `±window` positions, with a
/// learned per-head relative-position bias, followed by a position-wise
/// tanh feed-forward block. Both sublayers are residual.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub bo: Mat,
    /// `heads x (2 * window + 1)`
    pub rel: Mat,
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BigruLayer {
    pub fwd: GruParams,
    pub bwd: GruParams,
    /// `d x 2d`, applied to `[h_fwd; h_bwd]`.
    pub proj: Mat,
    pub proj_b: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderLayers {
    Attention(Vec<AttentionLayer>),
    Bigru(Vec<BigruLayer>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub embedding: Mat,
    pub layers: EncoderLayers,
    pub window: usize,
    pub heads: usize,
}

struct AttentionCache {
    x: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// attention weights per frame and head over the frame's window
    attn: Vec<Vec<Vec<f64>>>,
    ctx: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

struct BigruCache {
    fwd_steps: Vec<GruStep>,
    bwd_steps: Vec<GruStep>,
    cat: Vec<Vec<f64>>,
}

enum LayerCache {
    Attention(AttentionCache),
    Bigru(BigruCache),
}

/// Everything `backward` needs from one `forward_cached` call.
pub struct EncoderCache {
    tokens: Vec<u32>,
    layers: Vec<LayerCache>,
}

impl AttentionLayer {
    fn new<R: Rng + ?Sized>(d: usize, heads: usize, window: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            wq: Mat::uniform(d, d, scale, rng),
            wk: Mat::uniform(d, d, scale, rng),
            wv: Mat::uniform(d, d, scale, rng),
            wo: Mat::uniform(d, d, scale, rng),
            bo: Mat::uniform(1, d, scale, rng),
            rel: Mat::uniform(heads, 2 * window + 1, scale, rng),
            w1: Mat::uniform(d, d, scale, rng),
            b1: Mat::uniform(1, d, scale, rng),
            w2: Mat::uniform(d, d, scale, rng),
            b2: Mat::uniform(1, d, scale, rng),
        }
    }

    fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        vec![
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("rel", &self.rel),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        vec![
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.bo,
            &mut self.rel,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    fn forward(&self, x: Vec<Vec<f64>>, heads: usize, window: usize) -> (Vec<Vec<f64>>, AttentionCache) {
        let nt = x.len();
        let d = self.wq.rows;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let project = |w: &Mat| -> Vec<Vec<f64>> {
            x.iter()
                .map(|xt| {
                    let mut o = vec![0.0; d];
                    w.matvec(xt, &mut o);
                    o
                })
                .collect()
        };
        let (q, k, v) = (project(&self.wq), project(&self.wk), project(&self.wv));
        let mut attn = Vec::with_capacity(nt);
        let mut ctx = Vec::with_capacity(nt);
        for t in 0..nt {
            let lo = t.saturating_sub(window);
            let hi = (t + window).min(nt - 1);
            let mut ct = vec![0.0; d];
            let mut per_head = Vec::with_capacity(heads);
            for h in 0..heads {
                let r = h * dh..(h + 1) * dh;
                let rel = self.rel.row(h);
                let mut a: Vec<f64> = (lo..=hi)
                    .map(|j| scale * dot(&q[t][r.clone()], &k[j][r.clone()]) + rel[j + window - t])
                    .collect();
                let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for s in a.iter_mut() {
                    *s = (*s - m).exp();
                    z += *s;
                }
                for (s, j) in a.iter_mut().zip(lo..=hi) {
                    *s /= z;
                    for (c, vv) in ct[r.clone()].iter_mut().zip(&v[j][r.clone()]) {
                        *c += *s * vv;
                    }
                }
                per_head.push(a);
            }
            attn.push(per_head);
            ctx.push(ct);
        }
        let mut y = Vec::with_capacity(nt);
        let mut hidden = Vec::with_capacity(nt);
        let mut out = Vec::with_capacity(nt);
        for t in 0..nt {
            let mut yt = x[t].clone();
            add_into(&self.bo.data, &mut yt);
            self.wo.matvec_add(&ctx[t], &mut yt);
            let mut ht = self.b1.data.clone();
            self.w1.matvec_add(&yt, &mut ht);
            ht.iter_mut().for_each(|v| *v = v.tanh());
            let mut zt = yt.clone();
            add_into(&self.b2.data, &mut zt);
            self.w2.matvec_add(&ht, &mut zt);
            y.push(yt);
            hidden.push(ht);
            out.push(zt);
        }
        (out, AttentionCache { x, q, k, v, attn, ctx, y, hidden })
    }

    fn backward(
        &self,
        cache: &AttentionCache,
        d_out: &[Vec<f64>],
        heads: usize,
        window: usize,
        grad: &mut AttentionLayer,
    ) -> Vec<Vec<f64>> {
        let nt = d_out.len();
        let d = self.wq.rows;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dy: Vec<Vec<f64>> = d_out.to_vec();
        let mut dctx = vec![vec![0.0; d]; nt];
        for t in 0..nt {
            let dz = &d_out[t];
            grad.w2.outer_add(dz, &cache.hidden[t]);
            add_into(dz, &mut grad.b2.data);
            let mut dpre = vec![0.0; d];
            self.w2.tmatvec_add(dz, &mut dpre);
            for (g, h) in dpre.iter_mut().zip(&cache.hidden[t]) {
                *g *= 1.0 - h * h;
            }
            grad.w1.outer_add(&dpre, &cache.y[t]);
            add_into(&dpre, &mut grad.b1.data);
            self.w1.tmatvec_add(&dpre, &mut dy[t]);
            grad.wo.outer_add(&dy[t], &cache.ctx[t]);
            add_into(&dy[t], &mut grad.bo.data);
            self.wo.tmatvec_add(&dy[t], &mut dctx[t]);
        }
        let mut dq = vec![vec![0.0; d]; nt];
        let mut dk = vec![vec![0.0; d]; nt];
        let mut dv = vec![vec![0.0; d]; nt];
        for t in 0..nt {
            let lo = t.saturating_sub(window);
            let hi = (t + window).min(nt - 1);
            for h in 0..heads {
                let r = h * dh..(h + 1) * dh;
                let a = &cache.attn[t][h];
                let dc = &dctx[t][r.clone()];
                let da: Vec<f64> = (lo..=hi).map(|j| dot(dc, &cache.v[j][r.clone()])).collect();
                let mean: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
                for (i, j) in (lo..=hi).enumerate() {
                    for (g, c) in dv[j][r.clone()].iter_mut().zip(dc) {
                        *g += a[i] * c;
                    }
                    let ds = a[i] * (da[i] - mean);
                    grad.rel.row_mut(h)[j + window - t] += ds;
                    let s = scale * ds;
                    for m in r.clone() {
                        dq[t][m] += s * cache.k[j][m];
                        dk[j][m] += s * cache.q[t][m];
                    }
                }
            }
        }
        let mut dx = dy;
        for t in 0..nt {
            let xt = &cache.x[t];
            grad.wq.outer_add(&dq[t], xt);
            grad.wk.outer_add(&dk[t], xt);
            grad.wv.outer_add(&dv[t], xt);
            self.wq.tmatvec_add(&dq[t], &mut dx[t]);
            self.wk.tmatvec_add(&dk[t], &mut dx[t]);
            self.wv.tmatvec_add(&dv[t], &mut dx[t]);
        }
        dx
    }
}

impl BigruLayer {
    fn new<R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            fwd: GruParams::new(d, d, scale, rng),
            bwd: GruParams::new(d, d, scale, rng),
            proj: Mat::uniform(d, 2 * d, scale, rng),
            proj_b: Mat::uniform(1, d, scale, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            fwd: self.fwd.zeros_like(),
            bwd: self.bwd.zeros_like(),
            proj: self.proj.zeros_like(),
            proj_b: self.proj_b.zeros_like(),
        }
    }

    fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        for (dir, g) in [("fwd", &self.fwd), ("bwd", &self.bwd)] {
            out.extend(g.tensors().into_iter().map(|(n, m)| (format!("{dir}.{n}"), m)));
        }
        out.push(("proj".into(), &self.proj));
        out.push(("proj_b".into(), &self.proj_b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = self.fwd.tensors_mut();
        out.extend(self.bwd.tensors_mut());
        out.push(&mut self.proj);
        out.push(&mut self.proj_b);
        out
    }

    fn forward(&self, x: &[Vec<f64>]) -> (Vec<Vec<f64>>, BigruCache) {
        let nt = x.len();
        let d = self.fwd.hidden();
        let mut hf = Vec::with_capacity(nt);
        let mut fwd_steps = Vec::with_capacity(nt);
        let mut h = vec![0.0; d];
        for xt in x {
            let (nh, step) = self.fwd.step_cached(xt, &h);
            fwd_steps.push(step);
            hf.push(nh.clone());
            h = nh;
        }
        let mut hb = vec![Vec::new(); nt];
        let mut bwd_steps: Vec<Option<GruStep>> = (0..nt).map(|_| None).collect();
        let mut h = vec![0.0; d];
        for t in (0..nt).rev() {
            let (nh, step) = self.bwd.step_cached(&x[t], &h);
            bwd_steps[t] = Some(step);
            hb[t] = nh.clone();
            h = nh;
        }
        let mut cat = Vec::with_capacity(nt);
        let mut out = Vec::with_capacity(nt);
        for t in 0..nt {
            let mut c = hf[t].clone();
            c.extend_from_slice(&hb[t]);
            let mut o = self.proj_b.data.clone();
            self.proj.matvec_add(&c, &mut o);
            cat.push(c);
            out.push(o);
        }
        let bwd_steps = bwd_steps.into_iter().map(|s| s.expect("every frame visited")).collect();
        (out, BigruCache { fwd_steps, bwd_steps, cat })
    }

    fn backward(&self, cache: &BigruCache, d_out: &[Vec<f64>], grad: &mut BigruLayer) -> Vec<Vec<f64>> {
        let nt = d_out.len();
        let d = self.fwd.hidden();
        let mut dcat = vec![vec![0.0; 2 * d]; nt];
        for t in 0..nt {
            grad.proj.outer_add(&d_out[t], &cache.cat[t]);
            add_into(&d_out[t], &mut grad.proj_b.data);
            self.proj.tmatvec_add(&d_out[t], &mut dcat[t]);
        }
        let mut dx = vec![vec![0.0; self.fwd.input()]; nt];
        let mut carry = vec![0.0; d];
        for t in (0..nt).rev() {
            let mut dh = dcat[t][..d].to_vec();
            add_into(&carry, &mut dh);
            let mut prev = vec![0.0; d];
            self.fwd.backward(&cache.fwd_steps[t], &dh, &mut grad.fwd, &mut dx[t], &mut prev);
            carry = prev;
        }
        let mut carry = vec![0.0; d];
        for t in 0..nt {
            let mut dh = dcat[t][d..].to_vec();
            add_into(&carry, &mut dh);
            let mut prev = vec![0.0; d];
            self.bwd.backward(&cache.bwd_steps[t], &dh, &mut grad.bwd, &mut dx[t], &mut prev);
            carry = prev;
        }
        dx
    }
}

impl EncoderParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        kind: EncoderKind,
        vocab: usize,
        d: usize,
        layers: usize,
        heads: usize,
        window: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if d == 0 || layers == 0 {
            return Err(Error::Config("encoder needs a positive width and depth".into()));
        }
        if kind == EncoderKind::Attention && (heads == 0 || d % heads != 0) {
            return Err(Error::Config(format!("hidden size {d} is not divisible by {heads} heads")));
        }
        let embedding = Mat::uniform(vocab, d, scale, rng);
        let layers = match kind {
            EncoderKind::Attention => EncoderLayers::Attention(
                (0..layers).map(|_| AttentionLayer::new(d, heads, window, scale, rng)).collect(),
            ),
            EncoderKind::Bigru => {
                EncoderLayers::Bigru((0..layers).map(|_| BigruLayer::new(d, scale, rng)).collect())
            }
        };
        Ok(Self { embedding, layers, window, heads })
    }

    pub fn kind(&self) -> EncoderKind {
        match self.layers {
            EncoderLayers::Attention(_) => EncoderKind::Attention,
            EncoderLayers::Bigru(_) => EncoderKind::Bigru,
        }
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols
    }

    pub fn vocab(&self) -> usize {
        self.embedding.rows
    }

    pub fn zeros_like(&self) -> Self {
        let layers = match &self.layers {
            EncoderLayers::Attention(ls) => EncoderLayers::Attention(
                ls.iter()
                    .map(|l| {
                        let mut z = l.clone();
                        z.tensors_mut().into_iter().for_each(|m| m.data.fill(0.0));
                        z
                    })
                    .collect(),
            ),
            EncoderLayers::Bigru(ls) => EncoderLayers::Bigru(ls.iter().map(BigruLayer::zeros_like).collect()),
        };
        Self { embedding: self.embedding.zeros_like(), layers, window: self.window, heads: self.heads }
    }

    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        match &self.layers {
            EncoderLayers::Attention(ls) => {
                for (i, l) in ls.iter().enumerate() {
                    out.extend(l.tensors().into_iter().map(|(n, m)| (format!("attn{i}.{n}"), m)));
                }
            }
            EncoderLayers::Bigru(ls) => {
                for (i, l) in ls.iter().enumerate() {
                    out.extend(l.tensors().into_iter().map(|(n, m)| (format!("bigru{i}.{n}"), m)));
                }
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.embedding];
        match &mut self.layers {
            EncoderLayers::Attention(ls) => ls.iter_mut().for_each(|l| out.extend(l.tensors_mut())),
            EncoderLayers::Bigru(ls) => ls.iter_mut().for_each(|l| out.extend(l.tensors_mut())),
        }
        out
    }

    /// Frame vectors `f(t)`, one per token.
    pub fn encode(&self, tokens: &[u32]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward_cached(tokens)?.0)
    }

    pub fn forward_cached(&self, tokens: &[u32]) -> Result<(Vec<Vec<f64>>, EncoderCache)> {
        let vocab = self.vocab();
        let mut x = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            if tok as usize >= vocab {
                return Err(Error::contract(format!("token id {tok} outside input vocabulary of {vocab}")));
            }
            x.push(self.embedding.row(tok as usize).to_vec());
        }
        let mut caches = Vec::new();
        if !x.is_empty() {
            match &self.layers {
                EncoderLayers::Attention(ls) => {
                    for l in ls {
                        let (out, c) = l.forward(x, self.heads, self.window);
                        caches.push(LayerCache::Attention(c));
                        x = out;
                    }
                }
                EncoderLayers::Bigru(ls) => {
                    for l in ls {
                        let (out, c) = l.forward(&x);
                        caches.push(LayerCache::Bigru(c));
                        x = out;
                    }
                }
            }
        }
        Ok((x, EncoderCache { tokens: tokens.to_vec(), layers: caches }))
    }

    /// Accumulates gradients for `d_out = dL/df(t)` into `grad`.
    pub fn backward(&self, cache: &EncoderCache, d_out: &[Vec<f64>], grad: &mut EncoderParams) {
        let mut d = d_out.to_vec();
        match (&self.layers, &mut grad.layers) {
            (EncoderLayers::Attention(ls), EncoderLayers::Attention(gs)) => {
                for ((l, g), c) in ls.iter().zip(gs.iter_mut()).zip(&cache.layers).rev() {
                    if let LayerCache::Attention(c) = c {
                        d = l.backward(c, &d, self.heads, self.window, g);
                    }
                }
            }
            (EncoderLayers::Bigru(ls), EncoderLayers::Bigru(gs)) => {
                for ((l, g), c) in ls.iter().zip(gs.iter_mut()).zip(&cache.layers).rev() {
                    if let LayerCache::Bigru(c) = c {
                        d = l.backward(c, &d, g);
                    }
                }
            }
            _ => unreachable!("gradient container built from a different encoder"),
        }
        if cache.layers.is_empty() {
            return;
        }
        for (&tok, dt) in cache.tokens.iter().zip(&d) {
            add_into(dt, grad.embedding.row_mut(tok as usize));
        }
    }
}
