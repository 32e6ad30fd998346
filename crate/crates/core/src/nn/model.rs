use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::ops::{
    attention, attention_backward, gelu, gelu_grad, gemm, layer_norm, layer_norm_backward, linear,
    linear_backward, LnCache,
};
use super::{NetConfig, Real};
use crate::dataset::{NormStats, WindowSample};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R> {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
    pub data: Vec<R>,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform(f64),
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
struct BlockIds {
    ln1_w: usize,
    ln1_b: usize,
    q_w: usize,
    q_b: usize,
    q_a: usize,
    q_lb: usize,
    k_w: usize,
    k_b: usize,
    v_w: usize,
    v_b: usize,
    v_a: usize,
    v_lb: usize,
    o_w: usize,
    o_b: usize,
    ln2_w: usize,
    ln2_b: usize,
    fc_w: usize,
    fc_b: usize,
    pr_w: usize,
    pr_b: usize,
}

#[derive(Debug, Clone)]
struct Ids {
    embed_w: [usize; 2],
    embed_b: [usize; 2],
    eq: usize,
    ek: usize,
    ev: usize,
    resize_w: usize,
    resize_b: usize,
    wpe: usize,
    blocks: Vec<BlockIds>,
    lnf_w: usize,
    lnf_b: usize,
    out_w: usize,
    out_b: usize,
}

/// Normalized history of one window: real and imaginary planes, `T x NM` each.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput<R> {
    pub re: Vec<R>,
    pub im: Vec<R>,
}

impl<R: Real> NetInput<R> {
    /// Normalize a time-major `T x N x M` history and split it.
    pub fn from_history(history: &[Complex64]) -> Result<(Self, NormStats)> {
        let stats = NormStats::from_values(history.iter().copied())?;
        let (re, im) = history
            .iter()
            .map(|&z| stats.normalize(z))
            .map(|z| (R::cast_f64(z.re), R::cast_f64(z.im)))
            .unzip();
        Ok((NetInput { re, im }, stats))
    }

    pub fn from_sample(sample: &WindowSample) -> Self {
        let (re, im) = sample.normalized_history();
        NetInput {
            re: re.into_iter().map(R::cast_f64).collect(),
            im: im.into_iter().map(R::cast_f64).collect(),
        }
    }
}

/// Per-stream embedding activations, rows `B T`.
#[derive(Debug, Clone, Default)]
struct EmbedCache<R> {
    x: Vec<R>,
    e: Vec<R>,
    q: Vec<R>,
    k: Vec<R>,
    v: Vec<R>,
    probs: Vec<R>,
}

#[derive(Debug, Clone, Default)]
struct BlockCache<R> {
    u: Vec<R>,
    ln1: LnCache<R>,
    tq: Vec<R>,
    tv: Vec<R>,
    q: Vec<R>,
    k: Vec<R>,
    v: Vec<R>,
    probs: Vec<R>,
    att: Vec<R>,
    u2: Vec<R>,
    ln2: LnCache<R>,
    fc: Vec<R>,
    act: Vec<R>,
}

/// Activations of one batched forward pass, consumed by [`PortLlm::backward`].
#[derive(Debug, Clone)]
pub struct Cache<R> {
    batch: usize,
    lora: bool,
    embed: [EmbedCache<R>; 2],
    z: Vec<R>,
    blocks: Vec<BlockCache<R>>,
    lnf: LnCache<R>,
    hf: Vec<R>,
}

impl<R: Real> Cache<R> {
    /// Embedding-attention weights of stream `s` (0 real, 1 imaginary), `[B, K, T, T]`.
    pub fn embed_probs(&self, s: usize) -> &[R] {
        &self.embed[s].probs
    }

    /// Backbone attention weights of block `l`, `[B, H, F, F]`.
    pub fn backbone_probs(&self, l: usize) -> &[R] {
        &self.blocks[l].probs
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Gradient buffers aligned with the model's tensors; frozen tensors get none.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<R> {
    pub bufs: Vec<Vec<R>>,
}

impl<R: Real> Grads<R> {
    pub fn add_assign(&mut self, other: &Grads<R>) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: R) {
        self.bufs.iter_mut().flatten().for_each(|x| *x *= s);
    }

    /// Global L2 norm, accumulated in `f64`.
    pub fn global_norm(&self) -> f64 {
        self.bufs
            .iter()
            .flatten()
            .map(|x| x.as_f64() * x.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}

/// The forecaster: parameters plus the LoRA switch.
#[derive(Debug, Clone, PartialEq)]
pub struct PortLlm<R> {
    config: NetConfig,
    tensors: Vec<Tensor<R>>,
    lora: bool,
    ids_cache: IdsCache,
}

// Ids are rebuilt from the config, so equality ignores them.
#[derive(Debug, Clone)]
struct IdsCache(Ids);

impl PartialEq for IdsCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

struct Builder<'a, R, G: Rng> {
    tensors: Vec<Tensor<R>>,
    rng: &'a mut G,
}

impl<R: Real, G: Rng> Builder<'_, R, G> {
    fn add(&mut self, name: String, shape: &[usize], frozen: bool, init: Init) -> usize {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![R::zero(); n],
            Init::Ones => vec![R::one(); n],
            Init::Uniform(bound) => (0..n)
                .map(|_| R::cast_f64(self.rng.random_range(-bound..bound)))
                .collect(),
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("std > 0");
                (0..n).map(|_| R::cast_f64(d.sample(self.rng))).collect()
            }
        };
        self.tensors.push(Tensor {
            name,
            shape: shape.to_vec(),
            frozen,
            data,
        });
        self.tensors.len() - 1
    }
}

const BACKBONE_STD: f64 = 0.02;

impl<R: Real> PortLlm<R> {
    /// Fresh model: trainable layers get the usual `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// the backbone `N(0, 0.02)` weights with zero biases and unit LN gains,
    /// LoRA `A ~ N(0, 1/d_model)` and `B = 0`. Draws come from the `init` sub-seed.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "init", &[]);
        let (d, p, t, f, r) = (
            config.d_model,
            config.ports(),
            config.history,
            config.horizon,
            config.lora_rank,
        );
        let mut b = Builder {
            tensors: Vec::new(),
            rng: &mut rng,
        };
        let fan = |n: usize| Init::Uniform(1.0 / (n as f64).sqrt());
        let embed_w = [
            b.add("embed.re.weight".into(), &[d, p], false, fan(p)),
            b.add("embed.im.weight".into(), &[d, p], false, fan(p)),
        ];
        let embed_b = [
            b.add("embed.re.bias".into(), &[d], false, fan(p)),
            b.add("embed.im.bias".into(), &[d], false, fan(p)),
        ];
        let eq = b.add("embed_attn.q.weight".into(), &[d, d], false, fan(d));
        let ek = b.add("embed_attn.k.weight".into(), &[d, d], false, fan(d));
        let ev = b.add("embed_attn.v.weight".into(), &[d, d], false, fan(d));
        let resize_w = b.add("resize.weight".into(), &[f, 2 * t], false, fan(2 * t));
        let resize_b = b.add("resize.bias".into(), &[f], false, fan(2 * t));
        let wpe = b.add("wpe".into(), &[config.n_ctx, d], true, Init::Normal(BACKBONE_STD));
        let lora_a = Init::Normal(1.0 / (d as f64).sqrt());
        let w = Init::Normal(BACKBONE_STD);
        let blocks = (0..config.layers)
            .map(|i| {
                let mut add = |s: &str, shape: &[usize], frozen, init| b.add(format!("h.{i}.{s}"), shape, frozen, init);
                BlockIds {
                    ln1_w: add("ln_1.weight", &[d], true, Init::Ones),
                    ln1_b: add("ln_1.bias", &[d], true, Init::Zeros),
                    q_w: add("attn.q.weight", &[d, d], true, w),
                    q_b: add("attn.q.bias", &[d], true, Init::Zeros),
                    q_a: add("attn.q.lora_a", &[r, d], false, lora_a),
                    q_lb: add("attn.q.lora_b", &[d, r], false, Init::Zeros),
                    k_w: add("attn.k.weight", &[d, d], true, w),
                    k_b: add("attn.k.bias", &[d], true, Init::Zeros),
                    v_w: add("attn.v.weight", &[d, d], true, w),
                    v_b: add("attn.v.bias", &[d], true, Init::Zeros),
                    v_a: add("attn.v.lora_a", &[r, d], false, lora_a),
                    v_lb: add("attn.v.lora_b", &[d, r], false, Init::Zeros),
                    o_w: add("attn.c_proj.weight", &[d, d], true, w),
                    o_b: add("attn.c_proj.bias", &[d], true, Init::Zeros),
                    ln2_w: add("ln_2.weight", &[d], true, Init::Ones),
                    ln2_b: add("ln_2.bias", &[d], true, Init::Zeros),
                    fc_w: add("mlp.c_fc.weight", &[4 * d, d], true, w),
                    fc_b: add("mlp.c_fc.bias", &[4 * d], true, Init::Zeros),
                    pr_w: add("mlp.c_proj.weight", &[d, 4 * d], true, w),
                    pr_b: add("mlp.c_proj.bias", &[d], true, Init::Zeros),
                }
            })
            .collect();
        let lnf_w = b.add("ln_f.weight".into(), &[d], true, Init::Ones);
        let lnf_b = b.add("ln_f.bias".into(), &[d], true, Init::Zeros);
        let out_w = b.add("out.weight".into(), &[2 * p, d], false, fan(d));
        let out_b = b.add("out.bias".into(), &[2 * p], false, fan(d));
        let ids = Ids {
            embed_w,
            embed_b,
            eq,
            ek,
            ev,
            resize_w,
            resize_b,
            wpe,
            blocks,
            lnf_w,
            lnf_b,
            out_w,
            out_b,
        };
        Ok(PortLlm {
            config,
            tensors: b.tensors,
            lora: true,
            ids_cache: IdsCache(ids),
        })
    }

    fn ids(&self) -> &Ids {
        &self.ids_cache.0
    }

    fn p(&self, id: usize) -> &[R] {
        &self.tensors[id].data
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor<R>] {
        &self.tensors
    }

    /// Mutable tensor access for optimizers and weight import.
    pub fn tensors_mut(&mut self) -> &mut [Tensor<R>] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<R>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<R>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn lora_enabled(&self) -> bool {
        self.lora
    }

    /// With LoRA off the Q/V projections are the plain frozen linears.
    pub fn set_lora_enabled(&mut self, on: bool) {
        self.lora = on;
    }

    pub fn trainable_count(&self) -> usize {
        self.tensors.iter().filter(|t| !t.frozen).map(|t| t.data.len()).sum()
    }

    pub fn frozen_count(&self) -> usize {
        self.tensors.iter().filter(|t| t.frozen).map(|t| t.data.len()).sum()
    }

    /// SHA-256 over every frozen tensor's name and little-endian `f64` values.
    pub fn frozen_checksum(&self) -> String {
        let mut h = Sha256::new();
        for t in self.tensors.iter().filter(|t| t.frozen) {
            h.update(t.name.as_bytes());
            for v in &t.data {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn zero_grads(&self) -> Grads<R> {
        Grads {
            bufs: self
                .tensors
                .iter()
                .map(|t| if t.frozen { Vec::new() } else { vec![R::zero(); t.data.len()] })
                .collect(),
        }
    }

    /// Same weights in another precision.
    pub fn cast<S: Real>(&self) -> PortLlm<S> {
        PortLlm {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    frozen: t.frozen,
                    data: t.data.iter().map(|v| S::cast_f64(v.as_f64())).collect(),
                })
                .collect(),
            lora: self.lora,
            ids_cache: self.ids_cache.clone(),
        }
    }

    fn check_inputs(&self, inputs: &[NetInput<R>]) -> Result<()> {
        let n = self.config.history * self.config.ports();
        if inputs.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        for (i, x) in inputs.iter().enumerate() {
            if x.re.len() != n || x.im.len() != n {
                return Err(Error::InvalidInput(format!(
                    "input {i} has {}/{} values, expected T*N*M = {n}",
                    x.re.len(),
                    x.im.len()
                )));
            }
        }
        Ok(())
    }

    /// Embedding stage for a batch: per stream `[B T, D]` outputs.
    fn embed_batch(&self, inputs: &[NetInput<R>]) -> ([Vec<R>; 2], [EmbedCache<R>; 2]) {
        let c = &self.config;
        let (bsz, t, p, d, k) = (inputs.len(), c.history, c.ports(), c.d_model, c.embed_heads);
        let ids = self.ids();
        let rows = bsz * t;
        let mut outs: [Vec<R>; 2] = Default::default();
        let mut caches: [EmbedCache<R>; 2] = Default::default();
        for s in 0..2 {
            let x: Vec<R> = inputs
                .iter()
                .flat_map(|i| if s == 0 { &i.re } else { &i.im }.iter().copied())
                .collect();
            let e = linear(&x, rows, p, self.p(ids.embed_w[s]), Some(self.p(ids.embed_b[s])), d);
            let q = linear(&e, rows, d, self.p(ids.eq), None, d);
            let kk = linear(&e, rows, d, self.p(ids.ek), None, d);
            let v = linear(&e, rows, d, self.p(ids.ev), None, d);
            let mut out = vec![R::zero(); rows * d];
            let mut probs = vec![R::zero(); bsz * k * t * t];
            for b in 0..bsz {
                let r = b * t * d..(b + 1) * t * d;
                attention(
                    &q[r.clone()],
                    &kk[r.clone()],
                    &v[r.clone()],
                    t,
                    d,
                    k,
                    false,
                    &mut out[r],
                    &mut probs[b * k * t * t..(b + 1) * k * t * t],
                );
            }
            outs[s] = out;
            caches[s] = EmbedCache {
                x,
                e,
                q,
                k: kk,
                v,
                probs,
            };
        }
        (outs, caches)
    }

    /// Token sequences `[B, 2T, D]` in the order `[r_1..r_T, i_1..i_T]`.
    fn stack_tokens(&self, streams: &[Vec<R>; 2], bsz: usize) -> Vec<R> {
        let td = self.config.history * self.config.d_model;
        let mut z = Vec::with_capacity(2 * bsz * td);
        for b in 0..bsz {
            z.extend_from_slice(&streams[0][b * td..(b + 1) * td]);
            z.extend_from_slice(&streams[1][b * td..(b + 1) * td]);
        }
        z
    }

    /// `[B, 2T, D] -> [B, F, D]` along the token axis.
    fn resize_batch(&self, z: &[R], bsz: usize) -> Vec<R> {
        let c = &self.config;
        let (t2, f, d) = (2 * c.history, c.horizon, c.d_model);
        let ids = self.ids();
        let (w, bias) = (self.p(ids.resize_w), self.p(ids.resize_b));
        let mut out = vec![R::zero(); bsz * f * d];
        for b in 0..bsz {
            let o = &mut out[b * f * d..(b + 1) * f * d];
            for (row, &bv) in o.chunks_exact_mut(d).zip(bias) {
                row.fill(bv);
            }
            gemm(false, false, f, t2, d, R::one(), w, &z[b * t2 * d..(b + 1) * t2 * d], R::one(), o);
        }
        out
    }

    fn lora_proj(&self, u: &[R], rows: usize, w: usize, bias: usize, a: usize, lb: usize) -> (Vec<R>, Vec<R>) {
        let (d, r) = (self.config.d_model, self.config.lora_rank);
        let mut y = linear(u, rows, d, self.p(w), Some(self.p(bias)), d);
        if !self.lora {
            return (y, Vec::new());
        }
        let t = linear(u, rows, d, self.p(a), None, r);
        gemm(false, true, rows, r, d, R::one(), &t, self.p(lb), R::one(), &mut y);
        (y, t)
    }

    /// GPT-2 blocks over `[B, F, D]`; returns the `ln_f` output.
    fn backbone_batch(&self, x: &[R], bsz: usize) -> (Vec<R>, Vec<BlockCache<R>>, LnCache<R>) {
        let c = &self.config;
        let (f, d, heads) = (c.horizon, c.d_model, c.backbone_heads);
        let eps = R::cast_f64(c.ln_eps);
        let ids = self.ids();
        let rows = bsz * f;
        let wpe = &self.p(ids.wpe)[..f * d];
        let mut h: Vec<R> = x
            .chunks_exact(f * d)
            .flat_map(|s| s.iter().zip(wpe).map(|(a, b)| *a + *b))
            .collect();
        let mut caches = Vec::with_capacity(ids.blocks.len());
        for bl in &ids.blocks {
            let (u, ln1) = layer_norm(&h, d, self.p(bl.ln1_w), self.p(bl.ln1_b), eps);
            let (q, tq) = self.lora_proj(&u, rows, bl.q_w, bl.q_b, bl.q_a, bl.q_lb);
            let k = linear(&u, rows, d, self.p(bl.k_w), Some(self.p(bl.k_b)), d);
            let (v, tv) = self.lora_proj(&u, rows, bl.v_w, bl.v_b, bl.v_a, bl.v_lb);
            let mut att = vec![R::zero(); rows * d];
            let mut probs = vec![R::zero(); bsz * heads * f * f];
            for b in 0..bsz {
                let r = b * f * d..(b + 1) * f * d;
                attention(
                    &q[r.clone()],
                    &k[r.clone()],
                    &v[r.clone()],
                    f,
                    d,
                    heads,
                    true,
                    &mut att[r],
                    &mut probs[b * heads * f * f..(b + 1) * heads * f * f],
                );
            }
            let ao = linear(&att, rows, d, self.p(bl.o_w), Some(self.p(bl.o_b)), d);
            h.iter_mut().zip(&ao).for_each(|(a, b)| *a += *b);
            let (u2, ln2) = layer_norm(&h, d, self.p(bl.ln2_w), self.p(bl.ln2_b), eps);
            let fc = linear(&u2, rows, d, self.p(bl.fc_w), Some(self.p(bl.fc_b)), 4 * d);
            let act: Vec<R> = fc.iter().map(|&v| gelu(v)).collect();
            let m = linear(&act, rows, 4 * d, self.p(bl.pr_w), Some(self.p(bl.pr_b)), d);
            h.iter_mut().zip(&m).for_each(|(a, b)| *a += *b);
            caches.push(BlockCache {
                u,
                ln1,
                tq,
                tv,
                q,
                k,
                v,
                probs,
                att,
                u2,
                ln2,
                fc,
                act,
            });
        }
        let (hf, lnf) = layer_norm(&h, d, self.p(ids.lnf_w), self.p(ids.lnf_b), eps);
        (hf, caches, lnf)
    }

    /// Batched forward pass. Returns normalized outputs `[B, F, 2NM]` (per
    /// step: the real plane, then the imaginary plane) and the cache.
    pub fn forward(&self, inputs: &[NetInput<R>]) -> Result<(Vec<R>, Cache<R>)> {
        self.check_inputs(inputs)?;
        let c = &self.config;
        let bsz = inputs.len();
        let (streams, embed) = self.embed_batch(inputs);
        let z = self.stack_tokens(&streams, bsz);
        let xt = self.resize_batch(&z, bsz);
        let (hf, blocks, lnf) = self.backbone_batch(&xt, bsz);
        let ids = self.ids();
        let y = linear(
            &hf,
            bsz * c.horizon,
            c.d_model,
            self.p(ids.out_w),
            Some(self.p(ids.out_b)),
            2 * c.ports(),
        );
        Ok((
            y,
            Cache {
                batch: bsz,
                lora: self.lora,
                embed,
                z,
                blocks,
                lnf,
                hf,
            },
        ))
    }

    /// Accumulate parameter gradients given `dL/dy` for the batch in `cache`.
    pub fn backward(&self, cache: &Cache<R>, dy: &[R], grads: &mut Grads<R>) {
        let c = &self.config;
        let (bsz, t, f, d, p) = (cache.batch, c.history, c.horizon, c.d_model, c.ports());
        let (r, heads) = (c.lora_rank, c.backbone_heads);
        let ids = self.ids();
        let rows = bsz * f;
        assert_eq!(dy.len(), rows * 2 * p, "dy shape");

        let mut dhf = vec![R::zero(); rows * d];
        let w_out = self.p(ids.out_w);
        linear_backward(dy, &cache.hf, rows, d, 2 * p, w_out, Some(&mut grads.bufs[ids.out_w]), None, Some(&mut dhf));
        linear_backward(dy, &cache.hf, rows, d, 2 * p, w_out, None, Some(&mut grads.bufs[ids.out_b]), None);
        let mut dh = vec![R::zero(); rows * d];
        layer_norm_backward(&dhf, &cache.lnf, self.p(ids.lnf_w), d, &mut dh);

        for (bl, bc) in ids.blocks.iter().zip(&cache.blocks).rev() {
            // MLP branch: h_out = h_mid + proj(gelu(fc(ln_2(h_mid))))
            let mut dact = vec![R::zero(); rows * 4 * d];
            linear_backward(&dh, &bc.act, rows, 4 * d, d, self.p(bl.pr_w), None, None, Some(&mut dact));
            for (g, &x) in dact.iter_mut().zip(&bc.fc) {
                *g *= gelu_grad(x);
            }
            let mut du2 = vec![R::zero(); rows * d];
            linear_backward(&dact, &bc.u2, rows, d, 4 * d, self.p(bl.fc_w), None, None, Some(&mut du2));
            let mut dmid = dh.clone();
            layer_norm_backward(&du2, &bc.ln2, self.p(bl.ln2_w), d, &mut dmid);

            // attention branch: h_mid = h_in + c_proj(attn(ln_1(h_in)))
            let mut datt = vec![R::zero(); rows * d];
            linear_backward(&dmid, &bc.att, rows, d, d, self.p(bl.o_w), None, None, Some(&mut datt));
            let mut dq = vec![R::zero(); rows * d];
            let mut dk = vec![R::zero(); rows * d];
            let mut dv = vec![R::zero(); rows * d];
            for b in 0..bsz {
                let s = b * f * d..(b + 1) * f * d;
                attention_backward(
                    &bc.q[s.clone()],
                    &bc.k[s.clone()],
                    &bc.v[s.clone()],
                    &bc.probs[b * heads * f * f..(b + 1) * heads * f * f],
                    &datt[s.clone()],
                    f,
                    d,
                    heads,
                    &mut dq[s.clone()],
                    &mut dk[s.clone()],
                    &mut dv[s],
                );
            }
            let mut du = vec![R::zero(); rows * d];
            for (dy_p, w, a, lb, tt) in [(&dq, bl.q_w, bl.q_a, bl.q_lb, &bc.tq), (&dv, bl.v_w, bl.v_a, bl.v_lb, &bc.tv)] {
                linear_backward(dy_p, &bc.u, rows, d, d, self.p(w), None, None, Some(&mut du));
                if cache.lora {
                    gemm(true, false, d, rows, r, R::one(), dy_p, tt, R::one(), &mut grads.bufs[lb]);
                    let mut dt = vec![R::zero(); rows * r];
                    gemm(false, false, rows, d, r, R::one(), dy_p, self.p(lb), R::zero(), &mut dt);
                    gemm(true, false, r, rows, d, R::one(), &dt, &bc.u, R::one(), &mut grads.bufs[a]);
                    gemm(false, false, rows, r, d, R::one(), &dt, self.p(a), R::one(), &mut du);
                }
            }
            linear_backward(&dk, &bc.u, rows, d, d, self.p(bl.k_w), None, None, Some(&mut du));
            let mut din = dmid;
            layer_norm_backward(&du, &bc.ln1, self.p(bl.ln1_w), d, &mut din);
            dh = din;
        }

        // the positional table is frozen, so dh is also the resize-output gradient
        let t2 = 2 * t;
        let w_rs = self.p(ids.resize_w);
        let mut dz = vec![R::zero(); bsz * t2 * d];
        for b in 0..bsz {
            let dxt = &dh[b * f * d..(b + 1) * f * d];
            let zb = &cache.z[b * t2 * d..(b + 1) * t2 * d];
            gemm(false, true, f, d, t2, R::one(), dxt, zb, R::one(), &mut grads.bufs[ids.resize_w]);
            for (g, row) in grads.bufs[ids.resize_b].iter_mut().zip(dxt.chunks_exact(d)) {
                *g += row.iter().copied().fold(R::zero(), |a, b| a + b);
            }
            gemm(true, false, t2, f, d, R::one(), w_rs, dxt, R::zero(), &mut dz[b * t2 * d..(b + 1) * t2 * d]);
        }

        let td = t * d;
        let erows = bsz * t;
        let k = c.embed_heads;
        for s in 0..2 {
            let ec = &cache.embed[s];
            let da: Vec<R> = (0..bsz)
                .flat_map(|b| dz[b * 2 * td + s * td..b * 2 * td + (s + 1) * td].iter().copied())
                .collect();
            let mut dq = vec![R::zero(); erows * d];
            let mut dk = vec![R::zero(); erows * d];
            let mut dv = vec![R::zero(); erows * d];
            for b in 0..bsz {
                let sl = b * td..(b + 1) * td;
                attention_backward(
                    &ec.q[sl.clone()],
                    &ec.k[sl.clone()],
                    &ec.v[sl.clone()],
                    &ec.probs[b * k * t * t..(b + 1) * k * t * t],
                    &da[sl.clone()],
                    t,
                    d,
                    k,
                    &mut dq[sl.clone()],
                    &mut dk[sl.clone()],
                    &mut dv[sl],
                );
            }
            let mut de = vec![R::zero(); erows * d];
            for (dproj, id) in [(&dq, ids.eq), (&dk, ids.ek), (&dv, ids.ev)] {
                linear_backward(dproj, &ec.e, erows, d, d, self.p(id), Some(&mut grads.bufs[id]), None, Some(&mut de));
            }
            let w_e = self.p(ids.embed_w[s]);
            linear_backward(&de, &ec.x, erows, p, d, w_e, Some(&mut grads.bufs[ids.embed_w[s]]), None, None);
            linear_backward(&de, &ec.x, erows, p, d, w_e, None, Some(&mut grads.bufs[ids.embed_b[s]]), None);
        }
    }

    /// Rearrange one sample's normalized output `F x 2NM`, denormalize, and
    /// reassemble complex tables (`F x N x M`, time-major).
    pub fn project_output(&self, y: &[R], stats: &NormStats) -> Vec<Complex64> {
        let p = self.config.ports();
        y.chunks_exact(2 * p)
            .flat_map(|row| {
                (0..p).map(move |j| stats.denormalize(Complex64::new(row[j].as_f64(), row[p + j].as_f64())))
            })
            .collect()
    }

    /// Predict `F x N x M` future tables from a `T x N x M` history.
    pub fn predict(&self, history: &[Complex64]) -> Result<Vec<Complex64>> {
        let (input, stats) = NetInput::from_history(history)?;
        let (y, _) = self.forward(std::slice::from_ref(&input))?;
        Ok(self.project_output(&y, &stats))
    }

    /// Batched [`predict`](Self::predict) over stored windows.
    pub fn predict_samples(&self, samples: &[&WindowSample]) -> Result<Vec<Vec<Complex64>>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let inputs: Vec<NetInput<R>> = samples.iter().map(|s| NetInput::from_sample(s)).collect();
        let (y, _) = self.forward(&inputs)?;
        let per = self.config.horizon * 2 * self.config.ports();
        Ok(samples
            .iter()
            .zip(y.chunks_exact(per))
            .map(|(s, ys)| self.project_output(ys, &s.stats()))
            .collect())
    }

    /// Embedding stage for one sample: real and imaginary streams, `T x D` each.
    pub fn embed(&self, input: &NetInput<R>) -> Result<[Vec<R>; 2]> {
        self.check_inputs(std::slice::from_ref(input))?;
        Ok(self.embed_batch(std::slice::from_ref(input)).0)
    }

    /// `2T x D` tokens (`[r_1..r_T, i_1..i_T]`) to `F x D`.
    pub fn token_resize(&self, tokens: &[R]) -> Result<Vec<R>> {
        let c = &self.config;
        if tokens.len() != 2 * c.history * c.d_model {
            return Err(Error::InvalidInput(format!("expected 2T x D = {} tokens", 2 * c.history * c.d_model)));
        }
        Ok(self.resize_batch(tokens, 1))
    }

    /// Backbone over one `F x D` sequence, including `ln_f`.
    pub fn backbone_forward(&self, x: &[R]) -> Result<Vec<R>> {
        let c = &self.config;
        if x.len() != c.horizon * c.d_model {
            return Err(Error::InvalidInput(format!("expected F x D = {} values", c.horizon * c.d_model)));
        }
        Ok(self.backbone_batch(x, 1).0)
    }

    pub fn tensor_index(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }
}

#[cfg(test)]
mod tests;
