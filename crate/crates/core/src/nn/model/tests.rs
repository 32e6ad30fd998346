use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::{import_gpt2_safetensors, load_checkpoint, save_checkpoint};

fn tiny() -> NetConfig {
    NetConfig {
        d_model: 16,
        embed_heads: 2,
        backbone_heads: 2,
        layers: 1,
        lora_rank: 2,
        n_ctx: 8,
        history: 2,
        horizon: 2,
        grid: [3, 2],
        ln_eps: 1e-5,
    }
}

fn random_input<R: Real>(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> NetInput<R> {
    let n = cfg.history * cfg.ports();
    NetInput {
        re: (0..n).map(|_| R::cast_f64(rng.random_range(-2.0..2.0))).collect(),
        im: (0..n).map(|_| R::cast_f64(rng.random_range(-2.0..2.0))).collect(),
    }
}

fn randomize_lora_b<R: Real>(m: &mut PortLlm<R>, rng: &mut ChaCha8Rng) {
    for t in m.tensors_mut().iter_mut().filter(|t| t.name.ends_with("lora_b")) {
        for v in t.data.iter_mut() {
            *v = R::cast_f64(rng.random_range(-0.3..0.3));
        }
    }
}

#[test]
fn parameter_counts_match_closed_form() {
    let cfg = NetConfig::default();
    let m = PortLlm::<f32>::new(cfg.clone(), 1).unwrap();
    assert_eq!(m.trainable_count(), cfg.trainable_count());
    assert_eq!(m.trainable_count(), 66_200);
    assert_eq!(m.frozen_count(), cfg.frozen_count());
    let ratio = m.trainable_count() as f64 / (m.trainable_count() + m.frozen_count()) as f64;
    assert!(ratio < 0.35, "{ratio}");
    for t in m.tensors().iter().filter(|t| t.name.contains("lora")) {
        assert!(!t.frozen);
    }
}

#[test]
fn lora_zero_init_is_exact() {
    let cfg = NetConfig::default();
    let mut m = PortLlm::<f32>::new(cfg.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x: Vec<NetInput<f32>> = (0..3).map(|_| random_input(&cfg, &mut rng)).collect();
    let (on, _) = m.forward(&x).unwrap();
    m.set_lora_enabled(false);
    let (off, _) = m.forward(&x).unwrap();
    assert!(on.iter().zip(&off).all(|(a, b)| a.to_bits() == b.to_bits()));

    m.set_lora_enabled(true);
    randomize_lora_b(&mut m, &mut rng);
    let (moved, _) = m.forward(&x).unwrap();
    assert_ne!(moved, off);
}

#[test]
fn embedding_attention_rows_are_distributions() {
    let cfg = NetConfig::default();
    let m = PortLlm::<f32>::new(cfg.clone(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<NetInput<f32>> = (0..2).map(|_| random_input(&cfg, &mut rng)).collect();
    let (_, cache) = m.forward(&x).unwrap();
    for s in 0..2 {
        for row in cache.embed_probs(s).chunks(cfg.history) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "{sum}");
        }
    }
    let f = cfg.horizon;
    for (i, row) in cache.backbone_probs(0).chunks(f).enumerate() {
        let q = i % f;
        assert!(row[q + 1..].iter().all(|&p| p == 0.0));
    }
}

#[test]
fn single_head_embedding_matches_plain_attention() {
    let cfg = NetConfig {
        embed_heads: 1,
        ..tiny()
    };
    let m = PortLlm::<f64>::new(cfg.clone(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_input::<f64>(&cfg, &mut rng);
    let [er, _] = m.embed(&x).unwrap();

    let (t, p, d) = (cfg.history, cfg.ports(), cfg.d_model);
    let w = &m.tensor("embed.re.weight").unwrap().data;
    let b = &m.tensor("embed.re.bias").unwrap().data;
    let e: Vec<Vec<f64>> = (0..t)
        .map(|i| (0..d).map(|o| b[o] + (0..p).map(|j| w[o * p + j] * x.re[i * p + j]).sum::<f64>()).collect())
        .collect();
    let proj = |name: &str| -> Vec<Vec<f64>> {
        let w = &m.tensor(name).unwrap().data;
        e.iter()
            .map(|row| (0..d).map(|o| (0..d).map(|j| w[o * d + j] * row[j]).sum()).collect())
            .collect()
    };
    let (q, k, v) = (proj("embed_attn.q.weight"), proj("embed_attn.k.weight"), proj("embed_attn.v.weight"));
    for i in 0..t {
        let s: Vec<f64> = (0..t)
            .map(|j| (0..d).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let mx = s.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = s.iter().map(|v| (v - mx).exp()).sum();
        for c in 0..d {
            let o: f64 = (0..t).map(|j| (s[j] - mx).exp() / z * v[j][c]).sum();
            assert!((o - er[i * d + c]).abs() < 1e-12);
        }
    }
}

#[test]
fn resize_selection_and_linearity() {
    let cfg = tiny();
    let mut m = PortLlm::<f64>::new(cfg.clone(), 4).unwrap();
    let (t, f, d) = (cfg.history, cfg.horizon, cfg.d_model);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tok = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..2 * t * d).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let (x, y) = (tok(&mut rng), tok(&mut rng));
    let (a, b) = (0.7, -1.3);
    let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
    let rx = m.token_resize(&x).unwrap();
    let ry = m.token_resize(&y).unwrap();
    let rm = m.token_resize(&mix).unwrap();
    let bias_term: Vec<f64> = {
        let zero = vec![0.0; 2 * t * d];
        m.token_resize(&zero).unwrap()
    };
    // affine: subtract the bias response before checking linearity
    for i in 0..f * d {
        let lin = a * (rx[i] - bias_term[i]) + b * (ry[i] - bias_term[i]);
        assert!((rm[i] - bias_term[i] - lin).abs() < 1e-12);
    }

    // natural selection: output token f is real token f
    let w = m.tensor_mut("resize.weight").unwrap();
    w.data.fill(0.0);
    for i in 0..f {
        w.data[i * 2 * t + i] = 1.0;
    }
    m.tensor_mut("resize.bias").unwrap().data.fill(0.0);
    assert_eq!(m.token_resize(&x).unwrap(), x[..f * d].to_vec());
    assert!(m.token_resize(&x[1..]).is_err());
}

#[test]
fn output_planes_map_to_real_then_imaginary() {
    let cfg = tiny();
    let m = PortLlm::<f64>::new(cfg.clone(), 4).unwrap();
    let p = cfg.ports();
    let mut y: Vec<f64> = (0..cfg.horizon * 2 * p).map(|i| i as f64 * 0.1).collect();
    let unit = NormStats {
        mu: Complex64::new(0.0, 0.0),
        sigma: 1.0,
    };
    let base = m.project_output(&y, &unit);
    assert_eq!(base[3], Complex64::new(y[3], y[p + 3]));
    y[2 * p + 1] += 1.0; // step 1, real plane, port 1
    let moved = m.project_output(&y, &unit);
    for (i, (a, b)) in base.iter().zip(&moved).enumerate() {
        assert_eq!(a.im, b.im);
        assert_eq!(a.re != b.re, i == p + 1);
    }
    let stats = NormStats {
        mu: Complex64::new(1.0, -2.0),
        sigma: 3.0,
    };
    let scaled = m.project_output(&y, &stats);
    assert_eq!(scaled[0], Complex64::new(3.0 * y[0] + 1.0, 3.0 * y[p] - 2.0));
}

#[test]
fn predictions_are_deterministic_and_finite() {
    let cfg = NetConfig::default();
    let m = PortLlm::<f32>::new(cfg.clone(), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = cfg.history * cfg.ports();
    for _ in 0..100 {
        let h: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3)))
            .collect();
        let a = m.predict(&h).unwrap();
        assert_eq!(a.len(), cfg.horizon * cfg.ports());
        assert!(a.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        assert_eq!(a, m.predict(&h).unwrap());
    }
    assert!(m.predict(&vec![Complex64::new(1.0, 1.0); n]).is_err());
    assert!(m.predict(&vec![Complex64::new(1.0, 0.0); n - 1]).is_err());
}

/// Analytic vs central-difference gradients of `L = sum(c * y) + 0.5 sum(y^2)`.
#[test]
fn backward_matches_finite_differences() {
    let cfg = tiny();
    let mut m = PortLlm::<f64>::new(cfg.clone(), 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    randomize_lora_b(&mut m, &mut rng);
    let x: Vec<NetInput<f64>> = (0..2).map(|_| random_input(&cfg, &mut rng)).collect();
    let (y0, _) = m.forward(&x).unwrap();
    let c: Vec<f64> = (0..y0.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |m: &PortLlm<f64>| -> f64 {
        let (y, _) = m.forward(&x).unwrap();
        y.iter().zip(&c).map(|(a, b)| a * b + 0.5 * a * a).sum()
    };
    let (y, cache) = m.forward(&x).unwrap();
    let dy: Vec<f64> = y.iter().zip(&c).map(|(a, b)| a + b).collect();
    let mut g = m.zero_grads();
    m.backward(&cache, &dy, &mut g);

    let trainable: Vec<usize> = (0..m.tensors().len()).filter(|&i| !m.tensors()[i].frozen).collect();
    let h = 1e-6;
    for &ti in &trainable {
        let len = m.tensors()[ti].data.len();
        for _ in 0..3 {
            let j = rng.random_range(0..len);
            let orig = m.tensors()[ti].data[j];
            m.tensors_mut()[ti].data[j] = orig + h;
            let lp = loss(&m);
            m.tensors_mut()[ti].data[j] = orig - h;
            let lm = loss(&m);
            m.tensors_mut()[ti].data[j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = g.bufs[ti][j];
            // resize.bias shifts a whole token, which the next layer norm removes
            let ok = (fd - an).abs() < 1e-8 || (fd - an).abs() / fd.abs().max(an.abs()) < 1e-5;
            assert!(ok, "{} [{j}]: analytic {an} vs fd {fd}", m.tensors()[ti].name);
        }
    }
    assert!(g.bufs.iter().zip(m.tensors()).all(|(b, t)| b.is_empty() == t.frozen));
}

#[test]
fn forward_covers_a_shape_grid() {
    for (t, f, n, mm, d, k, nl) in [
        (1, 1, 1, 1, 8, 1, 1),
        (2, 5, 3, 2, 16, 2, 1),
        (8, 8, 4, 5, 32, 4, 2),
        (5, 3, 2, 7, 24, 3, 3),
        (8, 16, 6, 4, 64, 8, 2),
    ] {
        let cfg = NetConfig {
            d_model: d,
            embed_heads: k,
            backbone_heads: k,
            layers: nl,
            lora_rank: 1,
            n_ctx: 32,
            history: t,
            horizon: f,
            grid: [n, mm],
            ln_eps: 1e-5,
        };
        let m = PortLlm::<f32>::new(cfg.clone(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<NetInput<f32>> = (0..3).map(|_| random_input(&cfg, &mut rng)).collect();
        let (y, _) = m.forward(&x).unwrap();
        assert_eq!(y.len(), 3 * f * 2 * n * mm);
        assert!(y.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn config_validation() {
    let ok = NetConfig::default();
    assert!(ok.validate().is_ok());
    for bad in [
        NetConfig { embed_heads: 3, ..ok.clone() },
        NetConfig { backbone_heads: 5, ..ok.clone() },
        NetConfig { lora_rank: 9, ..ok.clone() },
        NetConfig { lora_rank: 0, ..ok.clone() },
        NetConfig { horizon: 2000, ..ok.clone() },
    ] {
        assert_eq!(bad.validate().unwrap_err().exit_code(), 2);
    }
    assert!(NetConfig::full_scale().validate().is_ok());
}

#[test]
fn checkpoint_round_trip() {
    let cfg = NetConfig::default();
    let mut m = PortLlm::<f32>::new(cfg.clone(), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    randomize_lora_b(&mut m, &mut rng);
    let x: Vec<NetInput<f32>> = (0..2).map(|_| random_input(&cfg, &mut rng)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let extra = vec![Tensor {
        name: "adam.m.out.bias".into(),
        shape: vec![2],
        frozen: false,
        data: vec![0.5, -0.25],
    }];
    save_checkpoint(&path, &m, None, &extra).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.model, m);
    assert_eq!(ck.extra, extra);
    assert_eq!(ck.model.forward(&x).unwrap().0, m.forward(&x).unwrap().0);

    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 1;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Data(_))));
}

#[test]
fn gpt2_import_splits_and_transposes() {
    use safetensors::tensor::TensorView;
    use safetensors::Dtype;

    let cfg = tiny();
    let d = cfg.d_model;
    let mut owned: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    let mut put = |name: &str, shape: Vec<usize>| {
        let n: usize = shape.iter().product();
        let bytes = (0..n)
            .flat_map(|i| ((i as f32) * 0.001 + name.len() as f32).to_le_bytes())
            .collect();
        owned.push((format!("transformer.{name}"), shape, bytes));
    };
    put("wpe.weight", vec![16, d]);
    for ln in ["ln_1", "ln_2"] {
        put(&format!("h.0.{ln}.weight"), vec![d]);
        put(&format!("h.0.{ln}.bias"), vec![d]);
    }
    put("h.0.attn.c_attn.weight", vec![d, 3 * d]);
    put("h.0.attn.c_attn.bias", vec![3 * d]);
    put("h.0.attn.c_proj.weight", vec![d, d]);
    put("h.0.attn.c_proj.bias", vec![d]);
    put("h.0.mlp.c_fc.weight", vec![d, 4 * d]);
    put("h.0.mlp.c_fc.bias", vec![4 * d]);
    put("h.0.mlp.c_proj.weight", vec![4 * d, d]);
    put("h.0.mlp.c_proj.bias", vec![d]);
    put("ln_f.weight", vec![d]);
    put("ln_f.bias", vec![d]);
    let views: Vec<(String, TensorView)> = owned
        .iter()
        .map(|(n, s, b)| (n.clone(), TensorView::new(Dtype::F32, s.clone(), b).unwrap()))
        .collect();
    let bytes = safetensors::serialize(views, &None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gpt2.safetensors");
    std::fs::write(&path, bytes).unwrap();

    let mut m = PortLlm::<f32>::new(cfg.clone(), 0).unwrap();
    let before = m.tensor("embed.re.weight").unwrap().clone();
    let n = import_gpt2_safetensors(&mut m, &path).unwrap();
    assert_eq!(n, cfg.frozen_count());
    assert_eq!(m.tensor("embed.re.weight").unwrap(), &before);

    // c_attn is [in, 3 out]; K occupies columns d..2d
    let src = |i: usize| (i as f32) * 0.001 + "h.0.attn.c_attn.weight".len() as f32;
    let k = &m.tensor("h.0.attn.k.weight").unwrap().data;
    let (o, i) = (3, 5);
    assert_eq!(k[o * d + i], src(i * 3 * d + d + o));
    let fc = &m.tensor("h.0.mlp.c_fc.weight").unwrap().data;
    let src_fc = |i: usize| (i as f32) * 0.001 + "h.0.mlp.c_fc.weight".len() as f32;
    assert_eq!(fc[7 * d + 2], src_fc(2 * 4 * d + 7));

    let short = NetConfig { n_ctx: 32, ..cfg };
    let mut m2 = PortLlm::<f32>::new(short, 0).unwrap();
    assert!(matches!(import_gpt2_safetensors(&mut m2, &path), Err(Error::Data(_))));
}
