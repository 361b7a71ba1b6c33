//! Shared test oracles: independent f64 reference forwards for every layer,
//! plus a central finite-difference harness.
//!
//! The oracles are deliberately written as plain loops over f64 slices and
//! never call into the library's forward path, so gradient checks compare
//! the tape's analytic gradients against derivatives of an independent
//! computation.

#![allow(dead_code)]

use rand::Rng as _;

pub const FD_STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-3;
pub const ABS_FLOOR: f64 = 1e-5;

// ---- f64 reference forwards ------------------------------------------------

pub mod oracle {
    /// `a[m x k] . b[k x p]`
    pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            for j in 0..p {
                let mut s = 0.0;
                for l in 0..k {
                    s += a[i * k + l] * b[l * p + j];
                }
                out[i * p + j] = s;
            }
        }
        out
    }

    /// `a[m x k] . b[p x k]^T`
    pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            for j in 0..p {
                let mut s = 0.0;
                for l in 0..k {
                    s += a[i * k + l] * b[j * k + l];
                }
                out[i * p + j] = s;
            }
        }
        out
    }

    pub fn add_row(x: &[f64], row: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut out = x.to_vec();
        for i in 0..rows {
            for j in 0..cols {
                out[i * cols + j] += row[j];
            }
        }
        out
    }

    pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64, rows: usize, cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &x[i * cols..(i + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..cols {
                out[i * cols + j] = (row[j] - mean) * inv * gain[j] + bias[j];
            }
        }
        out
    }

    pub fn softmax(row: &[f64]) -> Vec<f64> {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    pub fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    pub fn relu(x: f64) -> f64 {
        x.max(0.0)
    }

    /// Pre-norm transformer block matching the encoder layout.
    /// `x` is `[n x c]`; weights are square `[c x c]` except the FFN pair.
    #[allow(clippy::too_many_arguments)]
    pub fn encoder_block(
        x: &[f64],
        n: usize,
        c: usize,
        heads: usize,
        eps: f64,
        ln1_g: &[f64],
        ln1_b: &[f64],
        wq: &[f64],
        bq: &[f64],
        wk: &[f64],
        bk: &[f64],
        wv: &[f64],
        bv: &[f64],
        wo: &[f64],
        bo: &[f64],
        ln2_g: &[f64],
        ln2_b: &[f64],
        w1: &[f64],
        b1: &[f64],
        w2: &[f64],
        b2: &[f64],
        hidden: usize,
    ) -> Vec<f64> {
        let h = layer_norm(x, ln1_g, ln1_b, eps, n, c);
        let q = add_row(&matmul(&h, wq, n, c, c), bq, n, c);
        let k = add_row(&matmul(&h, wk, n, c, c), bk, n, c);
        let v = add_row(&matmul(&h, wv, n, c, c), bv, n, c);
        let dk = c / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut attn_out = vec![0.0; n * c];
        for hd in 0..heads {
            let off = hd * dk;
            for i in 0..n {
                let logits: Vec<f64> = (0..n)
                    .map(|j| {
                        (0..dk).map(|l| q[i * c + off + l] * k[j * c + off + l]).sum::<f64>()
                            * scale
                    })
                    .collect();
                let w = softmax(&logits);
                for l in 0..dk {
                    attn_out[i * c + off + l] =
                        (0..n).map(|j| w[j] * v[j * c + off + l]).sum();
                }
            }
        }
        let proj = add_row(&matmul(&attn_out, wo, n, c, c), bo, n, c);
        let x1: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();

        let h2 = layer_norm(&x1, ln2_g, ln2_b, eps, n, c);
        let f = add_row(&matmul(&h2, w1, n, c, hidden), b1, n, hidden);
        let f: Vec<f64> = f.into_iter().map(relu).collect();
        let f = add_row(&matmul(&f, w2, n, hidden, c), b2, n, c);
        x1.iter().zip(&f).map(|(a, b)| a + b).collect()
    }

    /// One OEM submodule: s = sigmoid(w_rg . LN(w_cp f)), out = s * f.
    pub fn oem_submodule(
        f: &[f64],
        w_cp: &[f64],
        ln_g: &[f64],
        ln_b: &[f64],
        w_rg: &[f64],
        c: usize,
        eps: f64,
    ) -> (f64, Vec<f64>) {
        let cq = c / 4;
        let z = matmul_nt(f, w_cp, 1, c, cq);
        let z = layer_norm(&z, ln_g, ln_b, eps, 1, cq);
        let logit: f64 = (0..cq).map(|j| z[j] * w_rg[j]).sum();
        let s = sigmoid(logit);
        (s, f.iter().map(|v| s * v).collect())
    }

    /// Multi-head cross attention from one query row to K center rows.
    pub fn cross_attention(
        f: &[f64],
        centers: &[f64],
        wq: &[f64],
        wk: &[f64],
        wv: &[f64],
        d: usize,
        k_count: usize,
        heads: usize,
    ) -> Vec<f64> {
        let q = matmul(f, wq, 1, d, d);
        let keys = matmul(centers, wk, k_count, d, d);
        let vals = matmul(centers, wv, k_count, d, d);
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut out = vec![0.0; d];
        for hd in 0..heads {
            let off = hd * dk;
            let logits: Vec<f64> = (0..k_count)
                .map(|i| (0..dk).map(|l| q[off + l] * keys[i * d + off + l]).sum::<f64>() * scale)
                .collect();
            let w = softmax(&logits);
            for l in 0..dk {
                out[off + l] = (0..k_count).map(|i| w[i] * vals[i * d + off + l]).sum();
            }
        }
        out
    }

    /// Post-norm FFN: two fully connected layers over the normalized input.
    pub fn post_norm_ffn(
        x: &[f64],
        ln_g: &[f64],
        ln_b: &[f64],
        w1: &[f64],
        b1: &[f64],
        w2: &[f64],
        b2: &[f64],
        d: usize,
        eps: f64,
    ) -> Vec<f64> {
        let hidden = 2 * d;
        let h = layer_norm(x, ln_g, ln_b, eps, 1, d);
        let h = add_row(&matmul(&h, w1, 1, d, hidden), b1, 1, hidden);
        let h: Vec<f64> = h.into_iter().map(relu).collect();
        add_row(&matmul(&h, w2, 1, hidden, d), b2, 1, d)
    }

    pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        lse - logits[label]
    }

    pub fn mse4(scores: &[f64], target: &[f64]) -> f64 {
        scores
            .iter()
            .zip(target)
            .map(|(s, t)| (s - t).powi(2))
            .sum::<f64>()
            / scores.len() as f64
    }

    pub fn contrastive(f: &[f64], centers: &[f64], ids: usize, dim: usize, id: usize, tau: f64) -> f64 {
        let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let logits: Vec<f64> = (0..ids)
            .map(|j| {
                let c = &centers[j * dim..(j + 1) * dim];
                let cnorm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                (0..dim).map(|l| f[l] * c[l]).sum::<f64>() / (fnorm * cnorm * tau)
            })
            .collect();
        cross_entropy(&logits, id)
    }

    /// AP for one query: mean precision at each correct hit, by brute force.
    pub fn average_precision(order: &[usize], gallery_ids: &[usize], qid: usize) -> f64 {
        let mut hits = 0usize;
        let mut acc = 0.0;
        for (pos, &gi) in order.iter().enumerate() {
            if gallery_ids[gi] == qid {
                hits += 1;
                acc += hits as f64 / (pos + 1) as f64;
            }
        }
        acc / hits as f64
    }
}

// ---- finite-difference harness ----------------------------------------------

pub struct FdReport {
    pub name: String,
    pub checked: usize,
    pub max_abs_err: f64,
    pub worst: Option<(usize, f64, f64)>,
    pub failures: usize,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Central finite differences of `oracle` around `x0`, compared entry-wise
/// against `analytic` with relative tolerance `REL_TOL` and absolute floor
/// `ABS_FLOOR`.
///
/// The nominal step is 1e-3. A coordinate whose difference quotient misses
/// the analytic gradient at that step is re-estimated at smaller steps
/// before it counts as a failure: a rectifier kink inside the +-h interval
/// poisons the quotient at the coarse step but vanishes as h shrinks,
/// while a genuinely wrong gradient disagrees at every step.
pub fn finite_diff_check(
    name: &str,
    x0: &[f32],
    analytic: &[f32],
    oracle: impl Fn(&[f64]) -> f64,
) -> FdReport {
    assert_eq!(x0.len(), analytic.len(), "{name}: gradient length mismatch");
    let base: Vec<f64> = x0.iter().map(|&v| v as f64).collect();
    let mut failures = 0usize;
    let mut max_abs_err = 0.0f64;
    let mut worst = None;
    let quotient = |i: usize, h: f64| -> f64 {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        (oracle(&plus) - oracle(&minus)) / (2.0 * h)
    };
    for i in 0..base.len() {
        let a = analytic[i] as f64;
        let mut fd = quotient(i, FD_STEP);
        let mut err = (a - fd).abs();
        let tol = |fd: f64| (REL_TOL * a.abs().max(fd.abs())).max(ABS_FLOOR);
        if err > tol(fd) {
            for h in [1e-4, 1e-5] {
                fd = quotient(i, h);
                err = (a - fd).abs();
                if err <= tol(fd) {
                    break;
                }
            }
        }
        if err > max_abs_err {
            max_abs_err = err;
            worst = Some((i, a, fd));
        }
        if err > tol(fd) {
            failures += 1;
        }
    }
    FdReport { name: name.to_string(), checked: base.len(), max_abs_err, worst, failures }
}

/// Uniform values in [-1, 1].
pub fn random_vec(rng: &mut fed_core::rng::Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub mod checks;
