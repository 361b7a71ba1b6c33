//! Per-layer gradient checks: run the real forward path on seeded inputs,
//! backprop a weighted-sum probe loss, and compare every parameter and
//! input gradient against central finite differences of the f64 oracle.

use std::collections::HashMap;

use fed_core::encoder::{Encoder, EncoderConfig, LN_EPS};
use fed_core::fdm::{cross_attention_with, Fdm, FdmConfig};
use fed_core::graph::{Graph, Var};
use fed_core::image::Image;
use fed_core::memory::{contrastive_loss, BankTag, MemoryBank};
use fed_core::model::FedModel;
use fed_core::oem::{mse_loss, Oem};
use fed_core::rng::{stream, Rng};
use fed_core::synth::generate_dataset;
use fed_core::tensor::ParamSet;

use super::{finite_diff_check, oracle, random_vec, FdReport};

/// Named f64 segments handed to an oracle closure.
pub struct Segments<'a> {
    map: HashMap<String, (usize, usize)>,
    data: &'a [f64],
}

impl<'a> Segments<'a> {
    pub fn get(&self, name: &str) -> &'a [f64] {
        let &(off, len) = self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("segment {name:?} missing"));
        &self.data[off..off + len]
    }
}

/// Builds x0/analytic vectors over named pieces and replays them for the
/// oracle side.
struct Layout {
    names: Vec<String>,
    sizes: Vec<usize>,
}

impl Layout {
    fn new() -> Layout {
        Layout { names: Vec::new(), sizes: Vec::new() }
    }

    fn push(&mut self, name: &str, size: usize) {
        self.names.push(name.to_string());
        self.sizes.push(size);
    }

    fn segments<'a>(&self, data: &'a [f64]) -> Segments<'a> {
        let mut map = HashMap::new();
        let mut off = 0;
        for (n, &s) in self.names.iter().zip(&self.sizes) {
            map.insert(n.clone(), (off, s));
            off += s;
        }
        Segments { map, data }
    }
}

fn weighted_sum(g: &mut Graph, out: Var, weights: &[f32]) -> Var {
    let (r, c) = g.shape(out);
    let w = g.leaf(r, c, weights.to_vec()).unwrap();
    let prod = g.mul(out, w).unwrap();
    g.sum_all(prod)
}

fn dot64(a: &[f64], w: &[f32]) -> f64 {
    a.iter().zip(w).map(|(&x, &y)| x * y as f64).sum()
}

/// matmul: loss = sum(w . (A B)) with A[3x4], B[4x2].
pub fn check_matmul(seed: u64) -> FdReport {
    let mut rng = stream(seed, "fd-matmul");
    let a = random_vec(&mut rng, 12);
    let b = random_vec(&mut rng, 8);
    let w = random_vec(&mut rng, 6);
    let mut g = Graph::new();
    let av = g.leaf(3, 4, a.clone()).unwrap();
    let bv = g.leaf(4, 2, b.clone()).unwrap();
    let out = g.matmul(av, bv).unwrap();
    let loss = weighted_sum(&mut g, out, &w);
    g.backward(loss).unwrap();
    let analytic: Vec<f32> = [g.grad(av), g.grad(bv)].concat();
    let x0: Vec<f32> = [a, b].concat();
    finite_diff_check("matmul", &x0, &analytic, move |xs| {
        let out = oracle::matmul(&xs[0..12], &xs[12..20], 3, 4, 2);
        dot64(&out, &w)
    })
}

/// layer_norm over a [2 x 8] input with affine gain/bias.
pub fn check_layer_norm(seed: u64) -> FdReport {
    let mut rng = stream(seed, "fd-ln");
    let x = random_vec(&mut rng, 16);
    let gain = random_vec(&mut rng, 8);
    let bias = random_vec(&mut rng, 8);
    let w = random_vec(&mut rng, 16);
    let mut g = Graph::new();
    let xv = g.leaf(2, 8, x.clone()).unwrap();
    let gv = g.leaf_row(&gain).unwrap();
    let bv = g.leaf_row(&bias).unwrap();
    let out = g.layer_norm(xv, gv, bv, LN_EPS).unwrap();
    let loss = weighted_sum(&mut g, out, &w);
    g.backward(loss).unwrap();
    let analytic: Vec<f32> = [g.grad(xv), g.grad(gv), g.grad(bv)].concat();
    let x0: Vec<f32> = [x, gain, bias].concat();
    finite_diff_check("layer_norm", &x0, &analytic, move |xs| {
        let out = oracle::layer_norm(&xs[0..16], &xs[16..24], &xs[24..32], LN_EPS as f64, 2, 8);
        dot64(&out, &w)
    })
}

/// softmax over a 6-entry row.
pub fn check_softmax(seed: u64) -> FdReport {
    let mut rng = stream(seed, "fd-softmax");
    let x = random_vec(&mut rng, 6);
    let w = random_vec(&mut rng, 6);
    let mut g = Graph::new();
    let xv = g.leaf_row(&x).unwrap();
    let out = g.softmax_rows(xv).unwrap();
    let loss = weighted_sum(&mut g, out, &w);
    g.backward(loss).unwrap();
    let analytic = g.grad(xv).to_vec();
    finite_diff_check("softmax", &x, &analytic, move |xs| dot64(&oracle::softmax(xs), &w))
}

/// sigmoid over 5 entries.
pub fn check_sigmoid(seed: u64) -> FdReport {
    let mut rng = stream(seed, "fd-sigmoid");
    let x = random_vec(&mut rng, 5);
    let w = random_vec(&mut rng, 5);
    let mut g = Graph::new();
    let xv = g.leaf_row(&x).unwrap();
    let out = g.sigmoid(xv);
    let loss = weighted_sum(&mut g, out, &w);
    g.backward(loss).unwrap();
    let analytic = g.grad(xv).to_vec();
    finite_diff_check("sigmoid", &x, &analytic, move |xs| {
        let out: Vec<f64> = xs.iter().map(|&v| oracle::sigmoid(v)).collect();
        dot64(&out, &w)
    })
}

/// patch embedding: flattened patches times the projection, plus bias.
pub fn check_patch_embed(seed: u64) -> FdReport {
    let mut rng = stream(seed, "fd-patch");
    let patches = random_vec(&mut rng, 4 * 12);
    let wmat = random_vec(&mut rng, 12 * 6);
    let bias = random_vec(&mut rng, 6);
    let w = random_vec(&mut rng, 24);
    let mut g = Graph::new();
    let pv = g.leaf(4, 12, patches.clone()).unwrap();
    let wv = g.leaf(12, 6, wmat.clone()).unwrap();
    let bv = g.leaf_row(&bias).unwrap();
    let emb = g.matmul(pv, wv).unwrap();
    let emb = g.add_row(emb, bv).unwrap();
    let loss = weighted_sum(&mut g, emb, &w);
    g.backward(loss).unwrap();
    let analytic: Vec<f32> = [g.grad(wv), g.grad(bv)].concat();
    let x0: Vec<f32> = [wmat, bias].concat();
    finite_diff_check("patch_embed", &x0, &analytic, move |xs| {
        let p64: Vec<f64> = patches.iter().map(|&v| v as f64).collect();
        let emb = oracle::matmul(&p64, &xs[0..72], 4, 12, 6);
        let emb = oracle::add_row(&emb, &xs[72..78], 4, 6);
        dot64(&emb, &w)
    })
}

/// Full tiny encoder (patch embed + cls/pos + pre-norm block + final norm),
/// checking every parameter through the real `encode` path.
pub fn check_encoder(seed: u64) -> FdReport {
    let cfg = EncoderConfig { image_h: 16, image_w: 8, patch: 4, depth: 1, channels: 8, heads: 2 };
    let mut params = ParamSet::new();
    let mut rng = stream(seed, "fd-encoder");
    let enc = Encoder::init(cfg, &mut params, &mut rng).unwrap();
    let image = generate_dataset(2, 2, 16, 8, seed).unwrap()[0].image.clone();

    let n = cfg.tokens();
    let c = cfg.channels;
    let w = random_vec(&mut rng, (n + 1) * c);

    let mut g = Graph::new();
    let tokens = enc.encode(&mut g, &params, &image).unwrap();
    let loss = weighted_sum(&mut g, tokens, &w);
    g.backward(loss).unwrap();
    params.zero_grads();
    g.scatter_param_grads(&mut params).unwrap();

    let mut layout = Layout::new();
    let mut x0 = Vec::new();
    let mut analytic = Vec::new();
    for (_, p) in params.iter() {
        layout.push(&p.name, p.value.numel());
        x0.extend_from_slice(&p.value.data);
        analytic.extend_from_slice(p.value.grad.as_ref().unwrap());
    }

    // constant patch matrix, (channel, dy, dx) within 4x2 row-major grid
    let mut pm = Vec::new();
    for gy in 0..4 {
        for gx in 0..2 {
            for ch in 0..3 {
                for dy in 0..4 {
                    for dx in 0..4 {
                        pm.push(image.get(ch, gy * 4 + dy, gx * 4 + dx) as f64);
                    }
                }
            }
        }
    }

    finite_diff_check("encoder", &x0, &analytic, move |xs| {
        let s = layout.segments(xs);
        let emb = oracle::matmul(&pm, s.get("encoder.patch.w"), n, 48, c);
        let emb = oracle::add_row(&emb, s.get("encoder.patch.b"), n, c);
        let mut x: Vec<f64> = s.get("encoder.cls").to_vec();
        x.extend_from_slice(&emb);
        let pos = s.get("encoder.pos");
        for (v, p) in x.iter_mut().zip(pos) {
            *v += p;
        }
        let x = oracle::encoder_block(
            &x,
            n + 1,
            c,
            2,
            LN_EPS as f64,
            s.get("encoder.block0.ln1.gain"),
            s.get("encoder.block0.ln1.bias"),
            s.get("encoder.block0.attn.wq"),
            s.get("encoder.block0.attn.bq"),
            s.get("encoder.block0.attn.wk"),
            s.get("encoder.block0.attn.bk"),
            s.get("encoder.block0.attn.wv"),
            s.get("encoder.block0.attn.bv"),
            s.get("encoder.block0.attn.wo"),
            s.get("encoder.block0.attn.bo"),
            s.get("encoder.block0.ln2.gain"),
            s.get("encoder.block0.ln2.bias"),
            s.get("encoder.block0.ffn.w1"),
            s.get("encoder.block0.ffn.b1"),
            s.get("encoder.block0.ffn.w2"),
            s.get("encoder.block0.ffn.b2"),
            4 * c,
        );
        let x = oracle::layer_norm(
            &x,
            s.get("encoder.ln_f.gain"),
            s.get("encoder.ln_f.bias"),
            LN_EPS as f64,
            n + 1,
            c,
        );
        dot64(&x, &w)
    })
}

/// One OEM submodule through the real `Oem::forward`, checking the
/// submodule weights and the part input.
pub fn check_oem(seed: u64) -> FdReport {
    let c = 16;
    let mut params = ParamSet::new();
    let mut rng = stream(seed, "fd-oem");
    let oem = Oem::init(c, &mut params, &mut rng).unwrap();
    let parts = random_vec(&mut rng, 4 * c);
    let w = random_vec(&mut rng, 4 * c);
    let ws = random_vec(&mut rng, 4);

    let mut g = Graph::new();
    let pv = g.leaf(4, c, parts.clone()).unwrap();
    let out = oem.forward(&mut g, &params, pv).unwrap();
    // probe both outputs: weighted features and scores
    let l1 = weighted_sum(&mut g, out.weighted, &w);
    let l2 = weighted_sum(&mut g, out.scores, &ws);
    let loss = g.add(l1, l2).unwrap();
    g.backward(loss).unwrap();
    params.zero_grads();
    g.scatter_param_grads(&mut params).unwrap();

    let mut layout = Layout::new();
    let mut x0 = Vec::new();
    let mut analytic = Vec::new();
    for (_, p) in params.iter() {
        layout.push(&p.name, p.value.numel());
        x0.extend_from_slice(&p.value.data);
        analytic.extend_from_slice(p.value.grad.as_ref().unwrap());
    }
    layout.push("parts", 4 * c);
    x0.extend_from_slice(&parts);
    analytic.extend_from_slice(g.grad(pv));

    finite_diff_check("oem_submodule", &x0, &analytic, move |xs| {
        let s = layout.segments(xs);
        let parts = s.get("parts");
        let mut total = 0.0;
        for i in 0..4 {
            let f = &parts[i * c..(i + 1) * c];
            let (score, weighted) = oracle::oem_submodule(
                f,
                s.get(&format!("oem.part{i}.w_cp")),
                s.get(&format!("oem.part{i}.ln.gain")),
                s.get(&format!("oem.part{i}.ln.bias")),
                s.get(&format!("oem.part{i}.w_rg")),
                c,
                LN_EPS as f64,
            );
            total += dot64(&weighted, &w[i * c..(i + 1) * c]);
            total += score * ws[i] as f64;
        }
        total
    })
}

/// FDM cross attention with explicit projections, via the real op.
pub fn check_cross_attention(seed: u64) -> FdReport {
    let d = 16;
    let heads = 4;
    let k = 3;
    let mut rng = stream(seed, "fd-xattn");
    let f = random_vec(&mut rng, d);
    let centers = random_vec(&mut rng, k * d);
    let wq = random_vec(&mut rng, d * d);
    let wk = random_vec(&mut rng, d * d);
    let wv = random_vec(&mut rng, d * d);
    let w = random_vec(&mut rng, d);

    let mut g = Graph::new();
    let fv = g.leaf(1, d, f.clone()).unwrap();
    let cv = g.leaf(k, d, centers.clone()).unwrap();
    let wqv = g.leaf(d, d, wq.clone()).unwrap();
    let wkv = g.leaf(d, d, wk.clone()).unwrap();
    let wvv = g.leaf(d, d, wv.clone()).unwrap();
    let out = cross_attention_with(&mut g, fv, cv, wqv, wkv, wvv, heads).unwrap();
    let loss = weighted_sum(&mut g, out.out, &w);
    g.backward(loss).unwrap();
    let analytic: Vec<f32> =
        [g.grad(fv), g.grad(cv), g.grad(wqv), g.grad(wkv), g.grad(wvv)].concat();
    let x0: Vec<f32> = [f, centers, wq, wk, wv].concat();
    finite_diff_check("fdm_cross_attention", &x0, &analytic, move |xs| {
        let (f, rest) = xs.split_at(d);
        let (c, rest) = rest.split_at(k * d);
        let (q, rest) = rest.split_at(d * d);
        let (kk, vv) = rest.split_at(d * d);
        let out = oracle::cross_attention(f, c, q, kk, vv, d, k, heads);
        dot64(&out, &w)
    })
}

/// Post-norm FFN through the real FDM module.
pub fn check_ffn(seed: u64) -> FdReport {
    let d = 16;
    let mut params = ParamSet::new();
    let mut rng = stream(seed, "fd-ffn");
    let fdm = Fdm::init(d, &mut params, &mut rng).unwrap();
    let x = random_vec(&mut rng, d);
    let w = random_vec(&mut rng, d);

    let mut g = Graph::new();
    let xv = g.leaf(1, d, x.clone()).unwrap();
    let out = fdm.apply_ffn1(&mut g, &params, xv).unwrap();
    let loss = weighted_sum(&mut g, out, &w);
    g.backward(loss).unwrap();
    params.zero_grads();
    g.scatter_param_grads(&mut params).unwrap();

    let mut layout = Layout::new();
    let mut x0 = Vec::new();
    let mut analytic = Vec::new();
    for (_, p) in params.iter() {
        if !p.name.starts_with("fdm.ffn1.") {
            continue;
        }
        layout.push(&p.name, p.value.numel());
        x0.extend_from_slice(&p.value.data);
        analytic.extend_from_slice(p.value.grad.as_ref().unwrap());
    }
    layout.push("x", d);
    x0.extend_from_slice(&x);
    analytic.extend_from_slice(g.grad(xv));

    finite_diff_check("ffn", &x0, &analytic, move |xs| {
        let s = layout.segments(xs);
        let out = oracle::post_norm_ffn(
            s.get("x"),
            s.get("fdm.ffn1.ln.gain"),
            s.get("fdm.ffn1.ln.bias"),
            s.get("fdm.ffn1.w1"),
            s.get("fdm.ffn1.b1"),
            s.get("fdm.ffn1.w2"),
            s.get("fdm.ffn1.b2"),
            d,
            LN_EPS as f64,
        );
        dot64(&out, &w)
    })
}

/// Full FDM pass end to end: projections, both FFNs, the gate, the query.
pub fn check_fdm_forward(seed: u64) -> FdReport {
    let d = 16;
    let mut params = ParamSet::new();
    let mut rng = stream(seed, "fd-fdm");
    let fdm = Fdm::init(d, &mut params, &mut rng).unwrap();
    let ids = 5;
    let mut features = std::collections::BTreeMap::new();
    for id in 0..ids {
        features.insert(id, vec![random_vec(&mut rng, d).iter().map(|&v| v).collect::<Vec<f32>>()]);
    }
    let bank = MemoryBank::init(ids, d, &features, 0.2, BankTag::PostOem).unwrap();
    let cfg = FdmConfig { heads: 4, k: 3 };
    let f = random_vec(&mut rng, d);
    let scores: Vec<f32> = (0..4).map(|_| 0.2 + 0.6 * ((random_vec(&mut rng, 1)[0] + 1.0) / 2.0)).collect();
    let w = random_vec(&mut rng, d);
    let query_id = 1usize;

    let mut g = Graph::new();
    let fv = g.leaf(1, d, f.clone()).unwrap();
    let sv = g.leaf_col(&scores).unwrap();
    let out = fdm.forward(&mut g, &params, fv, sv, &bank, query_id, cfg).unwrap();
    let loss = weighted_sum(&mut g, out, &w);
    g.backward(loss).unwrap();
    params.zero_grads();
    g.scatter_param_grads(&mut params).unwrap();

    let mut layout = Layout::new();
    let mut x0 = Vec::new();
    let mut analytic = Vec::new();
    for (_, p) in params.iter() {
        layout.push(&p.name, p.value.numel());
        x0.extend_from_slice(&p.value.data);
        analytic.extend_from_slice(p.value.grad.as_ref().unwrap());
    }
    layout.push("f", d);
    x0.extend_from_slice(&f);
    analytic.extend_from_slice(g.grad(fv));

    // the searched centers, frozen as constants for the oracle
    let nearest = bank.search(&f, query_id, cfg.k).unwrap();
    let mut centers64 = Vec::new();
    for &cid in &nearest {
        centers64.extend(bank.center(cid).iter().map(|&v| v as f64));
    }
    let scores64: Vec<f64> = scores.iter().map(|&v| v as f64).collect();

    finite_diff_check("fdm_forward", &x0, &analytic, move |xs| {
        let s = layout.segments(xs);
        let f = s.get("f");
        let fd = oracle::cross_attention(
            f,
            &centers64,
            s.get("fdm.wq"),
            s.get("fdm.wk"),
            s.get("fdm.wv"),
            d,
            3,
            4,
        );
        let t = oracle::post_norm_ffn(
            &fd,
            s.get("fdm.ffn1.ln.gain"),
            s.get("fdm.ffn1.ln.bias"),
            s.get("fdm.ffn1.w1"),
            s.get("fdm.ffn1.b1"),
            s.get("fdm.ffn1.w2"),
            s.get("fdm.ffn1.b2"),
            d,
            LN_EPS as f64,
        );
        let c = d / 4;
        let z: Vec<f64> = (0..d)
            .map(|j| t[j] * scores64[j / c] + f[j])
            .collect();
        let out = oracle::post_norm_ffn(
            &z,
            s.get("fdm.ffn2.ln.gain"),
            s.get("fdm.ffn2.ln.bias"),
            s.get("fdm.ffn2.w1"),
            s.get("fdm.ffn2.b1"),
            s.get("fdm.ffn2.w2"),
            s.get("fdm.ffn2.b2"),
            d,
            LN_EPS as f64,
        );
        dot64(&out, &w)
    })
}

/// ID loss (softmax cross-entropy) w.r.t. the logits.
pub fn check_id_loss(seed: u64) -> FdReport {
    let mut rng = stream(seed, "fd-id");
    let logits = random_vec(&mut rng, 8);
    let mut g = Graph::new();
    let lv = g.leaf_row(&logits).unwrap();
    let loss = g.cross_entropy(lv, 3).unwrap();
    g.backward(loss).unwrap();
    let analytic = g.grad(lv).to_vec();
    finite_diff_check("id_loss", &logits, &analytic, move |xs| oracle::cross_entropy(xs, 3))
}

/// Mask MSE w.r.t. the scores.
pub fn check_mse_loss(seed: u64) -> FdReport {
    let mut rng = stream(seed, "fd-mse");
    let scores = random_vec(&mut rng, 4);
    let target = [1.0f32, 0.0, 1.0, 1.0];
    let mut g = Graph::new();
    let sv = g.leaf_col(&scores).unwrap();
    let loss = mse_loss(&mut g, sv, target).unwrap();
    g.backward(loss).unwrap();
    let analytic = g.grad(sv).to_vec();
    finite_diff_check("mse_loss", &scores, &analytic, move |xs| {
        let t64: Vec<f64> = target.iter().map(|&v| v as f64).collect();
        oracle::mse4(xs, &t64)
    })
}

/// Contrastive loss w.r.t. the feature, bank centers held constant.
pub fn check_contrastive_loss(seed: u64) -> FdReport {
    let dim = 12;
    let ids = 6;
    let mut rng = stream(seed, "fd-contrastive");
    let mut features = std::collections::BTreeMap::new();
    for id in 0..ids {
        features.insert(id, vec![random_vec(&mut rng, dim)]);
    }
    let bank = MemoryBank::init(ids, dim, &features, 0.2, BankTag::PostOem).unwrap();
    let f = random_vec(&mut rng, dim);
    let tau = 0.05f32;
    let mut g = Graph::new();
    let fv = g.leaf(1, dim, f.clone()).unwrap();
    let loss = contrastive_loss(&mut g, fv, &bank, 2, tau).unwrap();
    g.backward(loss).unwrap();
    let analytic = g.grad(fv).to_vec();
    let centers64: Vec<f64> = bank.centers.iter().map(|&v| v as f64).collect();
    finite_diff_check("contrastive_loss", &f, &analytic, move |xs| {
        oracle::contrastive(xs, &centers64, ids, dim, 2, tau as f64)
    })
}

/// Every layer check for one seed, in a fixed order.
pub fn all_checks(seed: u64) -> Vec<FdReport> {
    vec![
        check_matmul(seed),
        check_layer_norm(seed),
        check_softmax(seed),
        check_sigmoid(seed),
        check_patch_embed(seed),
        check_encoder(seed),
        check_oem(seed),
        check_cross_attention(seed),
        check_ffn(seed),
        check_fdm_forward(seed),
        check_id_loss(seed),
        check_mse_loss(seed),
        check_contrastive_loss(seed),
    ]
}

/// A trained tiny model for behavioral tests that need one quickly.
pub fn quick_model(seed: u64) -> (FedModel, Vec<fed_core::synth::Sample>) {
    let cfg = fed_core::model::ModelConfig {
        encoder: EncoderConfig { image_h: 32, image_w: 16, patch: 4, depth: 1, channels: 16, heads: 2 },
        fdm: FdmConfig { heads: 4, k: 2 },
        train_ids: 4,
    };
    let model = FedModel::init(cfg, seed).unwrap();
    let samples = generate_dataset(4, 4, 32, 16, seed).unwrap();
    (model, samples)
}

pub fn _rng_for(seed: u64, label: &str) -> Rng {
    stream(seed, label)
}
