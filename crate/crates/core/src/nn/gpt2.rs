//! Import of pre-trained GPT-2 backbone weights from a `.safetensors` file
//! with the standard Hugging Face tensor names (optionally prefixed with
//! `transformer.`). GPT-2 stores its projections as `Conv1D` weights laid out
//! `[in, out]`; they are transposed to `[out, in]` here, and the fused
//! `c_attn` projection is split into Q, K and V.

use std::path::Path;

use safetensors::{Dtype, SafeTensors};

use super::{PortLlm, Real};
use crate::error::{Error, Result};

/// `(file tensor, model tensor(s), transform)` rows for a backbone of `layers` blocks.
pub fn gpt2_tensor_map(layers: usize) -> Vec<(String, String, &'static str)> {
    let mut rows = vec![("wpe.weight".to_string(), "wpe".to_string(), "first n_ctx rows")];
    for i in 0..layers {
        let h = format!("h.{i}");
        for ln in ["ln_1", "ln_2"] {
            for p in ["weight", "bias"] {
                rows.push((format!("{h}.{ln}.{p}"), format!("{h}.{ln}.{p}"), "copy"));
            }
        }
        rows.push((
            format!("{h}.attn.c_attn.weight"),
            format!("{h}.attn.{{q,k,v}}.weight"),
            "split columns in thirds, transpose",
        ));
        rows.push((format!("{h}.attn.c_attn.bias"), format!("{h}.attn.{{q,k,v}}.bias"), "split in thirds"));
        for (src, dst) in [("attn.c_proj", "attn.c_proj"), ("mlp.c_fc", "mlp.c_fc"), ("mlp.c_proj", "mlp.c_proj")] {
            rows.push((format!("{h}.{src}.weight"), format!("{h}.{dst}.weight"), "transpose"));
            rows.push((format!("{h}.{src}.bias"), format!("{h}.{dst}.bias"), "copy"));
        }
    }
    for p in ["weight", "bias"] {
        rows.push((format!("ln_f.{p}"), format!("ln_f.{p}"), "copy"));
    }
    rows
}

fn read_f64(st: &SafeTensors<'_>, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    let view = st
        .tensor(name)
        .or_else(|_| st.tensor(&format!("transformer.{name}")))
        .map_err(|_| Error::Data(format!("weight file lacks tensor `{name}`")))?;
    let data = view.data();
    let values = match view.dtype() {
        Dtype::F32 => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        other => return Err(Error::Data(format!("tensor `{name}` has unsupported dtype {other:?}"))),
    };
    Ok((view.shape().to_vec(), values))
}

fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

impl<R: Real> PortLlm<R> {
    fn set_from_f64(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let idx = self
            .tensor_index(name)
            .ok_or_else(|| Error::Data(format!("model has no tensor `{name}`")))?;
        let t = &mut self.tensors_mut()[idx];
        if t.data.len() != values.len() {
            return Err(Error::Data(format!(
                "tensor `{name}`: {} values for shape {:?}",
                values.len(),
                t.shape
            )));
        }
        for (d, v) in t.data.iter_mut().zip(values) {
            *d = R::cast_f64(*v);
        }
        Ok(())
    }
}

fn expect_shape(name: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Data(format!("tensor `{name}` has shape {got:?}, expected {want:?}")))
    }
}

/// Overwrite the frozen backbone with the first `N_L` blocks of a GPT-2
/// checkpoint. Returns the number of scalars imported.
pub fn import_gpt2_safetensors<R: Real>(model: &mut PortLlm<R>, path: &Path) -> Result<usize> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let (d, n_ctx, layers) = (model.config().d_model, model.config().n_ctx, model.config().layers);
    let mut count = 0;

    let (shape, wpe) = read_f64(&st, "wpe.weight")?;
    if shape.len() != 2 || shape[1] != d || shape[0] < n_ctx {
        return Err(Error::Data(format!(
            "wpe.weight has shape {shape:?}; need at least [{n_ctx}, {d}]"
        )));
    }
    model.set_from_f64("wpe", &wpe[..n_ctx * d])?;
    count += n_ctx * d;

    let copy = |model: &mut PortLlm<R>, src: &str, dst: &str, want: &[usize], t: bool| -> Result<usize> {
        let (shape, v) = read_f64(&st, src)?;
        expect_shape(src, &shape, want)?;
        let v = if t { transpose(want[0], want[1], &v) } else { v };
        model.set_from_f64(dst, &v)?;
        Ok(v.len())
    };
    for i in 0..layers {
        let h = format!("h.{i}");
        for ln in ["ln_1", "ln_2"] {
            for p in ["weight", "bias"] {
                count += copy(model, &format!("{h}.{ln}.{p}"), &format!("{h}.{ln}.{p}"), &[d], false)?;
            }
        }
        count += copy(model, &format!("{h}.attn.c_proj.weight"), &format!("{h}.attn.c_proj.weight"), &[d, d], true)?;
        count += copy(model, &format!("{h}.attn.c_proj.bias"), &format!("{h}.attn.c_proj.bias"), &[d], false)?;
        count += copy(model, &format!("{h}.mlp.c_fc.weight"), &format!("{h}.mlp.c_fc.weight"), &[d, 4 * d], true)?;
        count += copy(model, &format!("{h}.mlp.c_fc.bias"), &format!("{h}.mlp.c_fc.bias"), &[4 * d], false)?;
        count += copy(model, &format!("{h}.mlp.c_proj.weight"), &format!("{h}.mlp.c_proj.weight"), &[4 * d, d], true)?;
        count += copy(model, &format!("{h}.mlp.c_proj.bias"), &format!("{h}.mlp.c_proj.bias"), &[d], false)?;

        let (shape, w) = read_f64(&st, &format!("{h}.attn.c_attn.weight"))?;
        expect_shape("c_attn.weight", &shape, &[d, 3 * d])?;
        let (shape, b) = read_f64(&st, &format!("{h}.attn.c_attn.bias"))?;
        expect_shape("c_attn.bias", &shape, &[3 * d])?;
        let wt = transpose(d, 3 * d, &w);
        for (j, part) in ["q", "k", "v"].iter().enumerate() {
            model.set_from_f64(&format!("{h}.attn.{part}.weight"), &wt[j * d * d..(j + 1) * d * d])?;
            model.set_from_f64(&format!("{h}.attn.{part}.bias"), &b[j * d..(j + 1) * d])?;
        }
        count += w.len() + b.len();
    }
    for p in ["weight", "bias"] {
        count += copy(model, &format!("ln_f.{p}"), &format!("ln_f.{p}"), &[d], false)?;
    }
    Ok(count)
}
