//! The forecaster network.
//!
//! Data flow for one window (shapes per sample):
//!
//! ```text
//! history T x N x M complex
//!   -> normalize, split        re, im: T x NM
//!   -> embed_re / embed_im     T x D each
//!   -> shared K-head self-attention over the T time tokens (no mask)
//!   -> tokens [r_1..r_T, i_1..i_T]      2T x D
//!   -> resize along tokens              F x D
//!   -> + wpe, N_L GPT-2 blocks (LoRA on Q and V), ln_f
//!   -> out projection                   F x 2NM   (real plane, then imag plane)
//!   -> denormalize                      F x N x M complex
//! ```
//!
//! Backbone weights are frozen; embeddings, the embedding attention, the
//! resize map, the output head and the LoRA factors train. Gradients are
//! written out by hand in [`model`].

mod checkpoint;
mod gpt2;
mod model;
pub mod ops;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ManifestEntry, TrainState};
pub use gpt2::{gpt2_tensor_map, import_gpt2_safetensors};
pub use model::{Cache, Grads, NetInput, PortLlm, Tensor};

/// Floating-point element type of the network (`f32` for training, `f64`
/// for gradient checks).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// Raw strided GEMM, `C = alpha A B + beta C`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n`
    /// matrices; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn cast_f64(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite cast")
    }

    fn cast_usize(x: usize) -> Self {
        <Self as FromPrimitive>::from_usize(x).expect("finite cast")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float to f64")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        unsafe { matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        unsafe { matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
    }
}

/// Network shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub d_model: usize,
    /// Heads of the embedding attention (`K`).
    pub embed_heads: usize,
    /// Heads of every backbone block.
    pub backbone_heads: usize,
    /// Backbone depth `N_L`.
    pub layers: usize,
    pub lora_rank: usize,
    /// Positional-embedding table length.
    pub n_ctx: usize,
    /// History length `T`; must equal `scenario.history`.
    pub history: usize,
    /// Horizon `F`; must equal `scenario.horizon`.
    pub horizon: usize,
    /// Port grid `[N, M]`; must equal `channel.ports`.
    pub grid: [usize; 2],
    pub ln_eps: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            d_model: 64,
            embed_heads: 8,
            backbone_heads: 4,
            layers: 2,
            lora_rank: 4,
            n_ctx: 1024,
            history: 8,
            horizon: 8,
            grid: [20, 10],
            ln_eps: 1e-5,
        }
    }
}

impl NetConfig {
    /// GPT-2-small width with its first six blocks.
    pub fn full_scale() -> Self {
        NetConfig {
            d_model: 768,
            backbone_heads: 12,
            layers: 6,
            grid: [50, 100],
            ..Default::default()
        }
    }

    pub fn ports(&self) -> usize {
        self.grid[0] * self.grid[1]
    }

    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, r: String| Err(Error::config(format!("net.{f}"), r));
        if self.d_model == 0 || self.layers == 0 || self.history == 0 || self.horizon == 0 || self.ports() == 0 {
            return err("d_model", "d_model, layers, history, horizon and grid must all be >= 1".into());
        }
        if self.embed_heads == 0 || self.d_model % self.embed_heads != 0 {
            return err("embed_heads", format!("{} does not divide d_model {}", self.embed_heads, self.d_model));
        }
        if self.backbone_heads == 0 || self.d_model % self.backbone_heads != 0 {
            return err(
                "backbone_heads",
                format!("{} does not divide d_model {}", self.backbone_heads, self.d_model),
            );
        }
        if self.lora_rank == 0 || self.lora_rank * 8 > self.d_model {
            return err("lora_rank", format!("need 1 <= r <= d_model/8 = {}", self.d_model / 8));
        }
        if self.horizon > self.n_ctx {
            return err("horizon", format!("F={} exceeds n_ctx={}", self.horizon, self.n_ctx));
        }
        if !(self.ln_eps > 0.0) {
            return err("ln_eps", "must be > 0".into());
        }
        Ok(())
    }

    /// Closed-form trainable scalar count.
    pub fn trainable_count(&self) -> usize {
        let (d, p, t, f, r) = (self.d_model, self.ports(), self.history, self.horizon, self.lora_rank);
        let embed = 2 * (p * d + d);
        let attn = 3 * d * d;
        let resize = 2 * t * f + f;
        let head = d * 2 * p + 2 * p;
        let lora = self.layers * 2 * r * (d + d);
        embed + attn + resize + head + lora
    }

    /// Closed-form frozen scalar count.
    pub fn frozen_count(&self) -> usize {
        let d = self.d_model;
        let block = 2 * 2 * d + 4 * (d * d + d) + (4 * d * d + 4 * d) + (4 * d * d + d);
        self.n_ctx * d + self.layers * block + 2 * d
    }
}
