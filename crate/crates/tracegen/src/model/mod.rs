//! Decoder-only transformer over trace tokens.
//!
//! The input to the blocks is the sum of three embeddings: token, position
//! (within the window), and meta-data (the combined field/segment/trace-ID
//! token). Blocks are pre-normalization residual blocks with causal
//! multi-head self-attention and a GELU feed-forward; the output projection
//! is tied to the token embedding.
//!
//! All parameters live in one flat `Vec<f64>` described by a [`ParamLayout`];
//! gradients, optimizer moments, checkpoints, and finite-difference checks
//! all operate on that flat view.

pub mod checkpoint;
pub mod math;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, OptimizerState};
pub use train::{sample_training_window, split_train_val, train, SplitStream, TrainLogEntry, TrainPlan};

use crate::tokenizer::MetaParams;
use math::{gelu, gelu_grad, layernorm_bwd, layernorm_fwd, mm_ab, mm_abt, mm_atb, softmax_row, LnStats};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input length {len} exceeds context {context}")]
    WindowTooLong { len: usize, context: usize },
    #[error("tokens and meta tokens differ in length: {tokens} vs {metas}")]
    LengthMismatch { tokens: usize, metas: usize },
    #[error("token {token} out of vocabulary {vocab}")]
    TokenOutOfVocab { token: u32, vocab: usize },
    #[error("meta token {token} out of meta vocabulary {vocab}")]
    MetaOutOfVocab { token: u32, vocab: usize },
    #[error("{region} region of trace '{name}' has {len} tokens; needs at least {needed}")]
    RegionTooShort {
        region: &'static str,
        name: String,
        len: usize,
        needed: usize,
    },
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("empty dataset")]
    EmptyDataset,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width.
    pub d_model: usize,
    /// Number of transformer blocks.
    pub n_layers: usize,
    /// Attention heads per block.
    pub n_heads: usize,
    /// Context length in tokens.
    pub context: usize,
    /// Token vocabulary size (>= max node ID + 1).
    pub vocab: usize,
    /// Meta-vocabulary shape (fields, segments, traces).
    pub meta: MetaParams,
    /// Feed-forward expansion factor.
    pub mlp_ratio: usize,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale default: trains structured synthetic traces on a CPU in
    /// minutes.
    pub fn desk(vocab: usize, meta: MetaParams, seed: u64) -> Self {
        ModelConfig {
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            context: 256,
            vocab,
            meta,
            mlp_ratio: 4,
            seed,
        }
    }

    /// A deliberately small preset for quick experiments and pipeline runs.
    pub fn mini(vocab: usize, meta: MetaParams, seed: u64) -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            context: 128,
            vocab,
            meta,
            mlp_ratio: 4,
            seed,
        }
    }

    /// The GPT-2-small shape: 768 wide, 12 layers, 12 heads, 512 context.
    pub fn gpt2_small(vocab: usize, meta: MetaParams, seed: u64) -> Self {
        ModelConfig {
            d_model: 768,
            n_layers: 12,
            n_heads: 12,
            context: 512,
            vocab,
            meta,
            mlp_ratio: 4,
            seed,
        }
    }

    pub fn meta_vocab(&self) -> usize {
        self.meta.vocab_size() as usize
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return bad("d_model, n_layers, n_heads must be >= 1".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model = {} not divisible by n_heads = {}",
                self.d_model, self.n_heads
            ));
        }
        if self.context < 2 {
            return bad(format!("context = {} must be >= 2", self.context));
        }
        if self.vocab == 0 {
            return bad("vocab must be >= 1".into());
        }
        if !self.meta.is_valid() {
            return bad("meta params must all be >= 1".into());
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be >= 1".into());
        }
        Ok(())
    }

    /// Closed-form parameter count for this architecture:
    /// `(V + C + M) d + L ((4 + 2r) d^2 + (r + 9) d) + 2d`.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let r = self.mlp_ratio;
        let emb = (self.vocab + self.context + self.meta_vocab()) * d;
        let per_block = (4 + 2 * r) * d * d + (r + 9) * d;
        emb + self.n_layers * per_block + 2 * d
    }
}

/// Ranges of every parameter tensor inside the flat parameter vector, in
/// checkpoint order.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub meta_emb: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub total: usize,
    /// (name, shape) per tensor, in layout order; checkpoint headers.
    pub specs: Vec<(String, Vec<usize>)>,
}

#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w_qkv: Range<usize>,
    pub b_qkv: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w_fc1: Range<usize>,
    pub b_fc1: Range<usize>,
    pub w_fc2: Range<usize>,
    pub b_fc2: Range<usize>,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let r = config.mlp_ratio;
        let mut offset = 0usize;
        let mut specs = Vec::new();
        let mut take = |name: String, shape: Vec<usize>| -> Range<usize> {
            let len: usize = shape.iter().product();
            let range = offset..offset + len;
            offset += len;
            specs.push((name, shape));
            range
        };

        let tok_emb = take("tok_emb".into(), vec![config.vocab, d]);
        let pos_emb = take("pos_emb".into(), vec![config.context, d]);
        let meta_emb = take("meta_emb".into(), vec![config.meta_vocab(), d]);
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            blocks.push(BlockLayout {
                ln1_g: take(format!("block{l}.ln1.g"), vec![d]),
                ln1_b: take(format!("block{l}.ln1.b"), vec![d]),
                w_qkv: take(format!("block{l}.attn.w_qkv"), vec![3 * d, d]),
                b_qkv: take(format!("block{l}.attn.b_qkv"), vec![3 * d]),
                w_o: take(format!("block{l}.attn.w_o"), vec![d, d]),
                b_o: take(format!("block{l}.attn.b_o"), vec![d]),
                ln2_g: take(format!("block{l}.ln2.g"), vec![d]),
                ln2_b: take(format!("block{l}.ln2.b"), vec![d]),
                w_fc1: take(format!("block{l}.mlp.w_fc1"), vec![r * d, d]),
                b_fc1: take(format!("block{l}.mlp.b_fc1"), vec![r * d]),
                w_fc2: take(format!("block{l}.mlp.w_fc2"), vec![d, r * d]),
                b_fc2: take(format!("block{l}.mlp.b_fc2"), vec![d]),
            });
        }
        let lnf_g = take("lnf.g".into(), vec![d]);
        let lnf_b = take("lnf.b".into(), vec![d]);
        ParamLayout {
            tok_emb,
            pos_emb,
            meta_emb,
            blocks,
            lnf_g,
            lnf_b,
            total: offset,
            specs,
        }
    }
}

/// The model: a config, a layout, and one flat parameter vector.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; clamp u1 away from zero.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl Model {
    /// Initialize parameters: Gaussian(0, 0.02) everywhere, residual output
    /// projections scaled by 1/sqrt(2L), layernorm at identity, zero biases.
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let std = 0.02;
        let resid_scale = 1.0 / (2.0 * config.n_layers as f64).sqrt();

        let mut fill = |range: Range<usize>, params: &mut Vec<f64>, scale: f64| {
            for v in &mut params[range] {
                *v = normal(&mut rng) * scale;
            }
        };
        fill(layout.tok_emb.clone(), &mut params, std);
        fill(layout.pos_emb.clone(), &mut params, std);
        fill(layout.meta_emb.clone(), &mut params, std);
        for b in &layout.blocks {
            params[b.ln1_g.clone()].fill(1.0);
            fill(b.w_qkv.clone(), &mut params, std);
            fill(b.w_o.clone(), &mut params, std * resid_scale);
            params[b.ln2_g.clone()].fill(1.0);
            fill(b.w_fc1.clone(), &mut params, std);
            fill(b.w_fc2.clone(), &mut params, std * resid_scale);
        }
        params[layout.lnf_g.clone()].fill(1.0);
        Ok(Model {
            config,
            layout,
            params,
        })
    }

    fn p(&self, range: &Range<usize>) -> &[f64] {
        &self.params[range.clone()]
    }

    fn check_inputs(&self, tokens: &[u32], metas: &[u32]) -> Result<(), ModelError> {
        if tokens.len() != metas.len() {
            return Err(ModelError::LengthMismatch {
                tokens: tokens.len(),
                metas: metas.len(),
            });
        }
        if tokens.len() > self.config.context {
            return Err(ModelError::WindowTooLong {
                len: tokens.len(),
                context: self.config.context,
            });
        }
        for &t in tokens {
            if t as usize >= self.config.vocab {
                return Err(ModelError::TokenOutOfVocab {
                    token: t,
                    vocab: self.config.vocab,
                });
            }
        }
        for &m in metas {
            if m as usize >= self.config.meta_vocab() {
                return Err(ModelError::MetaOutOfVocab {
                    token: m,
                    vocab: self.config.meta_vocab(),
                });
            }
        }
        Ok(())
    }

    /// Sum the three embeddings for one position.
    fn embed_into(&self, x: &mut [f64], token: u32, meta: u32, pos: usize) {
        let d = self.config.d_model;
        let tok = &self.params[self.layout.tok_emb.clone()][token as usize * d..][..d];
        let p = &self.params[self.layout.pos_emb.clone()][pos * d..][..d];
        let m = &self.params[self.layout.meta_emb.clone()][meta as usize * d..][..d];
        for i in 0..d {
            x[i] = tok[i] + p[i] + m[i];
        }
    }

    /// Full-window forward pass; returns logits (len x vocab).
    pub fn forward(&self, tokens: &[u32], metas: &[u32]) -> Result<Vec<f64>, ModelError> {
        self.check_inputs(tokens, metas)?;
        let (logits, _) = self.forward_cached(tokens, metas);
        Ok(logits)
    }

    /// Forward pass keeping every intermediate needed by the backward pass.
    fn forward_cached(&self, tokens: &[u32], metas: &[u32]) -> (Vec<f64>, Cache) {
        let t = tokens.len();
        let d = self.config.d_model;
        let h = self.config.n_heads;
        let hd = d / h;
        let rd = self.config.mlp_ratio * d;
        let scale = 1.0 / (hd as f64).sqrt();

        let mut x = vec![0.0; t * d];
        for (i, (&tok, &meta)) in tokens.iter().zip(metas).enumerate() {
            self.embed_into(&mut x[i * d..(i + 1) * d], tok, meta, i);
        }

        let mut blocks = Vec::with_capacity(self.config.n_layers);
        for bl in &self.layout.blocks {
            let x_in = x;
            // Attention sublayer.
            let mut ln1_out = vec![0.0; t * d];
            let mut ln1 = LnStats::default();
            layernorm_fwd(&mut ln1_out, &mut ln1, &x_in, self.p(&bl.ln1_g), self.p(&bl.ln1_b), t, d);

            let mut qkv = vec![0.0; t * 3 * d];
            for row in qkv.chunks_exact_mut(3 * d) {
                row.copy_from_slice(self.p(&bl.b_qkv));
            }
            mm_abt(&mut qkv, &ln1_out, self.p(&bl.w_qkv), t, d, 3 * d);

            let mut probs = vec![0.0; h * t * t];
            let mut att_concat = vec![0.0; t * d];
            for head in 0..h {
                let q_off = head * hd;
                let k_off = d + head * hd;
                let v_off = 2 * d + head * hd;
                let p_head = &mut probs[head * t * t..(head + 1) * t * t];
                for i in 0..t {
                    let q = &qkv[i * 3 * d + q_off..i * 3 * d + q_off + hd];
                    let row = &mut p_head[i * t..(i + 1) * t];
                    for (j, slot) in row.iter_mut().enumerate() {
                        if j > i {
                            *slot = f64::NEG_INFINITY;
                            continue;
                        }
                        let k = &qkv[j * 3 * d + k_off..j * 3 * d + k_off + hd];
                        let mut dot = 0.0;
                        for (a, b) in q.iter().zip(k) {
                            dot += a * b;
                        }
                        *slot = dot * scale;
                    }
                    softmax_row(row);
                    let out = &mut att_concat[i * d + head * hd..i * d + head * hd + hd];
                    for j in 0..=i {
                        let pj = row[j];
                        if pj == 0.0 {
                            continue;
                        }
                        let v = &qkv[j * 3 * d + v_off..j * 3 * d + v_off + hd];
                        for (o, &vv) in out.iter_mut().zip(v) {
                            *o += pj * vv;
                        }
                    }
                }
            }

            let mut att_proj = vec![0.0; t * d];
            for row in att_proj.chunks_exact_mut(d) {
                row.copy_from_slice(self.p(&bl.b_o));
            }
            mm_abt(&mut att_proj, &att_concat, self.p(&bl.w_o), t, d, d);
            let mut x_mid = x_in.clone();
            math::add_assign(&mut x_mid, &att_proj);

            // Feed-forward sublayer.
            let mut ln2_out = vec![0.0; t * d];
            let mut ln2 = LnStats::default();
            layernorm_fwd(&mut ln2_out, &mut ln2, &x_mid, self.p(&bl.ln2_g), self.p(&bl.ln2_b), t, d);

            let mut fc1_pre = vec![0.0; t * rd];
            for row in fc1_pre.chunks_exact_mut(rd) {
                row.copy_from_slice(self.p(&bl.b_fc1));
            }
            mm_abt(&mut fc1_pre, &ln2_out, self.p(&bl.w_fc1), t, d, rd);
            let fc1_act: Vec<f64> = fc1_pre.iter().map(|&v| gelu(v)).collect();

            let mut fc2_out = vec![0.0; t * d];
            for row in fc2_out.chunks_exact_mut(d) {
                row.copy_from_slice(self.p(&bl.b_fc2));
            }
            mm_abt(&mut fc2_out, &fc1_act, self.p(&bl.w_fc2), t, rd, d);

            let mut x_out = x_mid.clone();
            math::add_assign(&mut x_out, &fc2_out);

            blocks.push(BlockCache {
                x_in,
                ln1,
                ln1_out,
                qkv,
                probs,
                att_concat,
                x_mid,
                ln2,
                ln2_out,
                fc1_pre,
                fc1_act,
            });
            x = x_out;
        }

        let mut hfin = vec![0.0; t * d];
        let mut lnf = LnStats::default();
        layernorm_fwd(&mut hfin, &mut lnf, &x, self.p(&self.layout.lnf_g), self.p(&self.layout.lnf_b), t, d);

        // Tied output projection: logits = h . E_tok^T.
        let v = self.config.vocab;
        let mut logits = vec![0.0; t * v];
        mm_abt(&mut logits, &hfin, self.p(&self.layout.tok_emb), t, d, v);

        let cache = Cache {
            t,
            blocks,
            x_final: x,
            lnf,
            h: hfin,
        };
        (logits, cache)
    }

    /// Mean cross-entropy (nats/position) of logits against targets.
    pub fn loss(&self, logits: &[f64], targets: &[u32]) -> Result<f64, ModelError> {
        let v = self.config.vocab;
        if targets.is_empty() || logits.len() != targets.len() * v {
            return Err(ModelError::LengthMismatch {
                tokens: logits.len() / v.max(1),
                metas: targets.len(),
            });
        }
        let mut total = 0.0;
        for (i, &target) in targets.iter().enumerate() {
            if target as usize >= v {
                return Err(ModelError::TokenOutOfVocab {
                    token: target,
                    vocab: v,
                });
            }
            let row = &logits[i * v..(i + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_sum: f64 = row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
            total += log_sum - row[target as usize];
        }
        Ok(total / targets.len() as f64)
    }

    /// Forward + loss + full backward for one window. Gradients accumulate
    /// into `grad` (same flat layout as `params`). Returns the loss.
    pub fn loss_and_grad(
        &self,
        tokens: &[u32],
        metas: &[u32],
        targets: &[u32],
        grad: &mut [f64],
    ) -> Result<f64, ModelError> {
        self.check_inputs(tokens, metas)?;
        debug_assert_eq!(grad.len(), self.layout.total);
        let (logits, cache) = self.forward_cached(tokens, metas);
        let loss = self.loss(&logits, targets)?;

        let t = cache.t;
        let d = self.config.d_model;
        let h = self.config.n_heads;
        let hd = d / h;
        let rd = self.config.mlp_ratio * d;
        let v = self.config.vocab;
        let scale = 1.0 / (hd as f64).sqrt();
        let inv_t = 1.0 / t as f64;

        // dLoss/dLogits = (softmax - onehot) / T.
        let mut dlogits = logits;
        for (i, &target) in targets.iter().enumerate() {
            let row = &mut dlogits[i * v..(i + 1) * v];
            softmax_row(row);
            row[target as usize] -= 1.0;
            for x in row.iter_mut() {
                *x *= inv_t;
            }
        }

        // Output projection (tied): dh = dlogits . E_tok; dE_tok += dlogits^T . h.
        let mut dh = vec![0.0; t * d];
        mm_ab(&mut dh, &dlogits, self.p(&self.layout.tok_emb), t, v, d);
        mm_atb(&mut grad[self.layout.tok_emb.clone()], &dlogits, &cache.h, t, v, d);
        drop(dlogits);

        // Final layernorm.
        let mut dx = vec![0.0; t * d];
        {
            let mut dgamma = vec![0.0; d];
            let mut dbeta = vec![0.0; d];
            layernorm_bwd(
                &mut dx,
                &mut dgamma,
                &mut dbeta,
                &dh,
                &cache.x_final,
                &cache.lnf,
                self.p(&self.layout.lnf_g),
                t,
                d,
            );
            math::add_assign(&mut grad[self.layout.lnf_g.clone()], &dgamma);
            math::add_assign(&mut grad[self.layout.lnf_b.clone()], &dbeta);
        }

        // Blocks in reverse.
        for (bl, bc) in self.layout.blocks.iter().zip(&cache.blocks).rev() {
            // Feed-forward sublayer: x_out = x_mid + fc2(gelu(fc1(ln2(x_mid)))).
            // dx holds dL/dx_out; the residual passes it through unchanged.
            let mut dfc1_act = vec![0.0; t * rd];
            mm_ab(&mut dfc1_act, &dx, self.p(&bl.w_fc2), t, d, rd);
            mm_atb(&mut grad[bl.w_fc2.clone()], &dx, &bc.fc1_act, t, d, rd);
            {
                let db = &mut grad[bl.b_fc2.clone()];
                for row in dx.chunks_exact(d) {
                    math::add_assign(db, row);
                }
            }
            let mut dfc1_pre = dfc1_act;
            for (g, &pre) in dfc1_pre.iter_mut().zip(&bc.fc1_pre) {
                *g *= gelu_grad(pre);
            }
            let mut dln2_out = vec![0.0; t * d];
            mm_ab(&mut dln2_out, &dfc1_pre, self.p(&bl.w_fc1), t, rd, d);
            mm_atb(&mut grad[bl.w_fc1.clone()], &dfc1_pre, &bc.ln2_out, t, rd, d);
            {
                let db = &mut grad[bl.b_fc1.clone()];
                for row in dfc1_pre.chunks_exact(rd) {
                    math::add_assign(db, row);
                }
            }
            drop(dfc1_pre);
            {
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                layernorm_bwd(
                    &mut dx,
                    &mut dgamma,
                    &mut dbeta,
                    &dln2_out,
                    &bc.x_mid,
                    &bc.ln2,
                    self.p(&bl.ln2_g),
                    t,
                    d,
                );
                math::add_assign(&mut grad[bl.ln2_g.clone()], &dgamma);
                math::add_assign(&mut grad[bl.ln2_b.clone()], &dbeta);
            }

            // Attention sublayer: x_mid = x_in + W_o(att_concat); dx holds dL/dx_mid.
            let mut datt_concat = vec![0.0; t * d];
            mm_ab(&mut datt_concat, &dx, self.p(&bl.w_o), t, d, d);
            mm_atb(&mut grad[bl.w_o.clone()], &dx, &bc.att_concat, t, d, d);
            {
                let db = &mut grad[bl.b_o.clone()];
                for row in dx.chunks_exact(d) {
                    math::add_assign(db, row);
                }
            }

            let mut dqkv = vec![0.0; t * 3 * d];
            for head in 0..h {
                let q_off = head * hd;
                let k_off = d + head * hd;
                let v_off = 2 * d + head * hd;
                let p_head = &bc.probs[head * t * t..(head + 1) * t * t];
                let mut dp = vec![0.0; t];
                for i in 0..t {
                    let dout = &datt_concat[i * d + head * hd..i * d + head * hd + hd];
                    let p_row = &p_head[i * t..(i + 1) * t];
                    // dp_j = dout . v_j; dv_j += p_j * dout.
                    for j in 0..=i {
                        let pj = p_row[j];
                        let vj = &bc.qkv[j * 3 * d + v_off..j * 3 * d + v_off + hd];
                        let mut dot = 0.0;
                        for (a, b) in dout.iter().zip(vj) {
                            dot += a * b;
                        }
                        dp[j] = dot;
                        if pj != 0.0 {
                            let dv = &mut dqkv[j * 3 * d + v_off..j * 3 * d + v_off + hd];
                            for (g, &o) in dv.iter_mut().zip(dout) {
                                *g += pj * o;
                            }
                        }
                    }
                    // Softmax backward: ds_j = p_j (dp_j - sum_k p_k dp_k).
                    let mut dot_pd = 0.0;
                    for j in 0..=i {
                        dot_pd += p_row[j] * dp[j];
                    }
                    let qi = &bc.qkv[i * 3 * d + q_off..i * 3 * d + q_off + hd];
                    let mut dq = vec![0.0; hd];
                    for j in 0..=i {
                        let ds = p_row[j] * (dp[j] - dot_pd) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = &bc.qkv[j * 3 * d + k_off..j * 3 * d + k_off + hd];
                        for (g, &kv) in dq.iter_mut().zip(kj) {
                            *g += ds * kv;
                        }
                        let dk = &mut dqkv[j * 3 * d + k_off..j * 3 * d + k_off + hd];
                        for (g, &qv) in dk.iter_mut().zip(qi) {
                            *g += ds * qv;
                        }
                    }
                    let dq_dst = &mut dqkv[i * 3 * d + q_off..i * 3 * d + q_off + hd];
                    math::add_assign(dq_dst, &dq);
                }
            }
            drop(datt_concat);

            let mut dln1_out = vec![0.0; t * d];
            mm_ab(&mut dln1_out, &dqkv, self.p(&bl.w_qkv), t, 3 * d, d);
            mm_atb(&mut grad[bl.w_qkv.clone()], &dqkv, &bc.ln1_out, t, 3 * d, d);
            {
                let db = &mut grad[bl.b_qkv.clone()];
                for row in dqkv.chunks_exact(3 * d) {
                    math::add_assign(db, row);
                }
            }
            drop(dqkv);
            {
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                layernorm_bwd(
                    &mut dx,
                    &mut dgamma,
                    &mut dbeta,
                    &dln1_out,
                    &bc.x_in,
                    &bc.ln1,
                    self.p(&bl.ln1_g),
                    t,
                    d,
                );
                math::add_assign(&mut grad[bl.ln1_g.clone()], &dgamma);
                math::add_assign(&mut grad[bl.ln1_b.clone()], &dbeta);
            }
        }

        // Embedding scatter: dx is now dL/d(embedded input).
        let tok_base = self.layout.tok_emb.start;
        let pos_base = self.layout.pos_emb.start;
        let meta_base = self.layout.meta_emb.start;
        for (i, (&tok, &meta)) in tokens.iter().zip(metas).enumerate() {
            let dxi = &dx[i * d..(i + 1) * d];
            let tok_g = tok_base + tok as usize * d;
            let pos_g = pos_base + i * d;
            let meta_g = meta_base + meta as usize * d;
            for (j, &g) in dxi.iter().enumerate() {
                grad[tok_g + j] += g;
                grad[pos_g + j] += g;
                grad[meta_g + j] += g;
            }
        }

        Ok(loss)
    }

    /// Start an empty incremental decoding state.
    pub fn new_kv_cache(&self) -> KvCache {
        let cap = self.config.context * self.config.d_model;
        KvCache {
            k: vec![Vec::with_capacity(cap); self.config.n_layers],
            v: vec![Vec::with_capacity(cap); self.config.n_layers],
            len: 0,
        }
    }

    /// Append one token to the decoding state and return the logits row for
    /// the next position. Errors if the cache is already full.
    pub fn decode_step(
        &self,
        cache: &mut KvCache,
        token: u32,
        meta: u32,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_inputs(&[token], &[meta])?;
        if cache.len >= self.config.context {
            return Err(ModelError::WindowTooLong {
                len: cache.len + 1,
                context: self.config.context,
            });
        }
        let d = self.config.d_model;
        let h = self.config.n_heads;
        let hd = d / h;
        let rd = self.config.mlp_ratio * d;
        let scale = 1.0 / (hd as f64).sqrt();
        let pos = cache.len;

        let mut x = vec![0.0; d];
        self.embed_into(&mut x, token, meta, pos);

        let mut ln_out = vec![0.0; d];
        let mut stats = LnStats::default();
        for (bl, (k_cache, v_cache)) in self
            .layout
            .blocks
            .iter()
            .zip(cache.k.iter_mut().zip(cache.v.iter_mut()))
        {
            layernorm_fwd(&mut ln_out, &mut stats, &x, self.p(&bl.ln1_g), self.p(&bl.ln1_b), 1, d);
            let mut qkv = self.p(&bl.b_qkv).to_vec();
            mm_abt(&mut qkv, &ln_out, self.p(&bl.w_qkv), 1, d, 3 * d);
            k_cache.extend_from_slice(&qkv[d..2 * d]);
            v_cache.extend_from_slice(&qkv[2 * d..3 * d]);

            let mut att = vec![0.0; d];
            let rows = pos + 1;
            for head in 0..h {
                let q = &qkv[head * hd..(head + 1) * hd];
                let mut weights = vec![0.0; rows];
                for (j, w) in weights.iter_mut().enumerate() {
                    let kj = &k_cache[j * d + head * hd..j * d + head * hd + hd];
                    let mut dot = 0.0;
                    for (a, b) in q.iter().zip(kj) {
                        dot += a * b;
                    }
                    *w = dot * scale;
                }
                softmax_row(&mut weights);
                let out = &mut att[head * hd..(head + 1) * hd];
                for (j, &w) in weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let vj = &v_cache[j * d + head * hd..j * d + head * hd + hd];
                    for (o, &vv) in out.iter_mut().zip(vj) {
                        *o += w * vv;
                    }
                }
            }
            let mut att_proj = self.p(&bl.b_o).to_vec();
            mm_abt(&mut att_proj, &att, self.p(&bl.w_o), 1, d, d);
            math::add_assign(&mut x, &att_proj);

            layernorm_fwd(&mut ln_out, &mut stats, &x, self.p(&bl.ln2_g), self.p(&bl.ln2_b), 1, d);
            let mut fc1 = self.p(&bl.b_fc1).to_vec();
            mm_abt(&mut fc1, &ln_out, self.p(&bl.w_fc1), 1, d, rd);
            for v in fc1.iter_mut() {
                *v = gelu(*v);
            }
            let mut fc2 = self.p(&bl.b_fc2).to_vec();
            mm_abt(&mut fc2, &fc1, self.p(&bl.w_fc2), 1, rd, d);
            math::add_assign(&mut x, &fc2);
        }

        let mut hfin = vec![0.0; d];
        layernorm_fwd(&mut hfin, &mut stats, &x, self.p(&self.layout.lnf_g), self.p(&self.layout.lnf_b), 1, d);
        let mut logits = vec![0.0; self.config.vocab];
        mm_abt(&mut logits, &hfin, self.p(&self.layout.tok_emb), 1, d, self.config.vocab);

        cache.len += 1;
        Ok(logits)
    }
}

/// Per-layer key/value state for incremental decoding.
#[derive(Debug, Clone)]
pub struct KvCache {
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

struct Cache {
    t: usize,
    blocks: Vec<BlockCache>,
    x_final: Vec<f64>,
    lnf: LnStats,
    h: Vec<f64>,
}

struct BlockCache {
    x_in: Vec<f64>,
    ln1: LnStats,
    ln1_out: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    att_concat: Vec<f64>,
    x_mid: Vec<f64>,
    ln2: LnStats,
    ln2_out: Vec<f64>,
    fc1_pre: Vec<f64>,
    fc1_act: Vec<f64>,
}
