//! Reverse-mode differentiation on an operation tape.
//!
//! A [`Graph`] is rebuilt for every training step. Forward calls record a
//! backward closure per operation; [`Graph::backward`] replays them in
//! reverse and accumulates gradients, which are then scattered back into the
//! [`ParamSet`]. All node values are at most rank 2 (rows x cols); vectors
//! are rows `[1 x n]` or columns `[n x 1]`.
//!
//! Storage is f32, reductions accumulate in f64.

use std::collections::HashMap;

use crate::error::{FedError, Result};
use crate::tensor::{ParamId, ParamSet, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    data: Vec<f32>,
    rows: usize,
    cols: usize,
}

impl Node {
    fn numel(&self) -> usize {
        self.rows * self.cols
    }
}

type BackFn = Box<dyn Fn(&[Node], &mut [Vec<f32>])>;

/// Operation tape. Create one per training step (or per inference pass with
/// [`Graph::inference`], which skips recording).
pub struct Graph {
    nodes: Vec<Node>,
    ops: Vec<BackFn>,
    grads: Vec<Vec<f32>>,
    param_links: Vec<(usize, ParamId)>,
    param_cache: HashMap<usize, Var>,
    recording: bool,
    ran_backward: bool,
}

fn shape_of(n: &Node) -> Vec<usize> {
    vec![n.rows, n.cols]
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            param_links: Vec::new(),
            param_cache: HashMap::new(),
            recording: true,
            ran_backward: false,
        }
    }

    /// Forward-only graph: no backward closures are recorded, `backward`
    /// refuses to run. Used for evaluation.
    pub fn inference() -> Self {
        let mut g = Graph::new();
        g.recording = false;
        g
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f32>) -> Var {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node { data, rows, cols });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, f: BackFn) {
        if self.recording {
            self.ops.push(f);
        }
    }

    // ---- node access -------------------------------------------------

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f32 {
        debug_assert_eq!(self.nodes[v.0].numel(), 1);
        self.nodes[v.0].data[0]
    }

    /// Gradient of the backward-seeded scalar w.r.t. `v`. Empty before
    /// `backward` has run.
    pub fn grad(&self, v: Var) -> &[f32] {
        &self.grads[v.0]
    }

    // ---- leaves ------------------------------------------------------

    /// Constant input node (no gradient is propagated out of the graph).
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f32>) -> Result<Var> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(FedError::Dim { op: "leaf", lhs: vec![rows, cols], rhs: vec![data.len()] });
        }
        Ok(self.push(rows, cols, data))
    }

    pub fn leaf_row(&mut self, data: &[f32]) -> Result<Var> {
        self.leaf(1, data.len(), data.to_vec())
    }

    pub fn leaf_col(&mut self, data: &[f32]) -> Result<Var> {
        self.leaf(data.len(), 1, data.to_vec())
    }

    pub fn leaf_tensor(&mut self, t: &Tensor) -> Result<Var> {
        let (rows, cols) = tensor_rows_cols(t)?;
        self.leaf(rows, cols, t.data.clone())
    }

    /// Leases a parameter into the graph. Repeated leases of the same
    /// parameter return the same node, so gradient contributions from every
    /// use site accumulate in one place.
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.param_cache.get(&id.0) {
            return v;
        }
        let t = &set.get(id).value;
        let (rows, cols) = tensor_rows_cols(t).expect("parameter tensors are rank <= 2");
        let v = self.push(rows, cols, t.data.clone());
        self.param_links.push((v.0, id));
        self.param_cache.insert(id.0, v);
        v
    }

    // ---- linear algebra ----------------------------------------------

    /// `a[m x k] . b[k x p] -> [m x p]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, p) = self.shape(b);
        if k != k2 {
            return Err(FedError::Dim {
                op: "matmul",
                lhs: shape_of(&self.nodes[a.0]),
                rhs: shape_of(&self.nodes[b.0]),
            });
        }
        let mut out = vec![0.0f32; m * p];
        mm(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, p, &mut out);
        let o = self.push(m, p, out);
        self.record(Box::new(move |nodes, grads| {
            let d_out = grads[o.0].clone();
            // dA += dC . B^T
            mm_nt_acc(&d_out, &nodes[b.0].data, m, p, k, &mut grads[a.0]);
            // dB += A^T . dC
            mm_tn_acc(&nodes[a.0].data, &d_out, k, m, p, &mut grads[b.0]);
        }));
        Ok(o)
    }

    /// `a[m x k] . b[p x k]^T -> [m x p]`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (p, k2) = self.shape(b);
        if k != k2 {
            return Err(FedError::Dim {
                op: "matmul_nt",
                lhs: shape_of(&self.nodes[a.0]),
                rhs: shape_of(&self.nodes[b.0]),
            });
        }
        let mut out = vec![0.0f32; m * p];
        mm_nt(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, p, &mut out);
        let o = self.push(m, p, out);
        self.record(Box::new(move |nodes, grads| {
            let d_out = grads[o.0].clone();
            // dA += dC . B
            mm_acc(&d_out, &nodes[b.0].data, m, p, k, &mut grads[a.0]);
            // dB += dC^T . A
            mm_tn_acc(&d_out, &nodes[a.0].data, p, m, k, &mut grads[b.0]);
        }));
        Ok(o)
    }

    // ---- elementwise -------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (r1, c1) = self.shape(a);
        let (r2, c2) = self.shape(b);
        if (r1, c1) != (r2, c2) {
            return Err(FedError::Dim {
                op,
                lhs: shape_of(&self.nodes[a.0]),
                rhs: shape_of(&self.nodes[b.0]),
            });
        }
        Ok((r1, c1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("add", a, b)?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x + y);
        let o = self.push(r, c, data);
        self.record(Box::new(move |_, grads| {
            let d = grads[o.0].clone();
            acc(&mut grads[a.0], &d);
            acc(&mut grads[b.0], &d);
        }));
        Ok(o)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("sub", a, b)?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x - y);
        let o = self.push(r, c, data);
        self.record(Box::new(move |_, grads| {
            let d = grads[o.0].clone();
            acc(&mut grads[a.0], &d);
            for (g, v) in grads[b.0].iter_mut().zip(&d) {
                *g -= v;
            }
        }));
        Ok(o)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x * y);
        let o = self.push(r, c, data);
        self.record(Box::new(move |nodes, grads| {
            let d = grads[o.0].clone();
            for (i, v) in d.iter().enumerate() {
                grads[a.0][i] += v * nodes[b.0].data[i];
            }
            for (i, v) in d.iter().enumerate() {
                grads[b.0][i] += v * nodes[a.0].data[i];
            }
        }));
        Ok(o)
    }

    /// Adds a `[1 x c]` row to every row of `x[r x c]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        let (br, bc) = self.shape(row);
        if br != 1 || bc != c {
            return Err(FedError::Dim {
                op: "add_row",
                lhs: shape_of(&self.nodes[x.0]),
                rhs: shape_of(&self.nodes[row.0]),
            });
        }
        let mut data = self.nodes[x.0].data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += self.nodes[row.0].data[j];
            }
        }
        let o = self.push(r, c, data);
        self.record(Box::new(move |_, grads| {
            let d = grads[o.0].clone();
            acc(&mut grads[x.0], &d);
            for i in 0..r {
                for j in 0..c {
                    grads[row.0][j] += d[i * c + j];
                }
            }
        }));
        Ok(o)
    }

    /// Scales row `i` of `x[r x c]` by the scalar `s[i]` of `s[r x 1]`.
    pub fn mul_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        let (sr, sc) = self.shape(s);
        if sc != 1 || sr != r {
            return Err(FedError::Dim {
                op: "mul_rows",
                lhs: shape_of(&self.nodes[x.0]),
                rhs: shape_of(&self.nodes[s.0]),
            });
        }
        let mut data = self.nodes[x.0].data.clone();
        for i in 0..r {
            let si = self.nodes[s.0].data[i];
            for v in &mut data[i * c..(i + 1) * c] {
                *v *= si;
            }
        }
        let o = self.push(r, c, data);
        self.record(Box::new(move |nodes, grads| {
            let d = grads[o.0].clone();
            for i in 0..r {
                let si = nodes[s.0].data[i];
                for j in 0..c {
                    grads[x.0][i * c + j] += d[i * c + j] * si;
                }
            }
            for i in 0..r {
                let mut accum = 0.0f64;
                for j in 0..c {
                    accum += d[i * c + j] as f64 * nodes[x.0].data[i * c + j] as f64;
                }
                grads[s.0][i] += accum as f32;
            }
        }));
        Ok(o)
    }

    pub fn scale(&mut self, x: Var, k: f32) -> Var {
        let (r, c) = self.shape(x);
        let data = self.nodes[x.0].data.iter().map(|v| v * k).collect();
        let o = self.push(r, c, data);
        self.record(Box::new(move |_, grads| {
            let d = grads[o.0].clone();
            for (g, v) in grads[x.0].iter_mut().zip(&d) {
                *g += k * v;
            }
        }));
        o
    }

    // ---- activations -------------------------------------------------

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let data: Vec<f32> = self.nodes[x.0].data.iter().map(|&v| stable_sigmoid(v)).collect();
        let o = self.push(r, c, data);
        self.record(Box::new(move |nodes, grads| {
            let d = grads[o.0].clone();
            for (i, v) in d.iter().enumerate() {
                let y = nodes[o.0].data[i];
                grads[x.0][i] += v * y * (1.0 - y);
            }
        }));
        o
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let data: Vec<f32> = self.nodes[x.0].data.iter().map(|&v| v.max(0.0)).collect();
        let o = self.push(r, c, data);
        self.record(Box::new(move |nodes, grads| {
            let d = grads[o.0].clone();
            for (i, v) in d.iter().enumerate() {
                if nodes[x.0].data[i] > 0.0 {
                    grads[x.0][i] += v;
                }
            }
        }));
        o
    }

    /// Elementwise reciprocal of strictly positive input, floored at 1e-12.
    pub fn recip(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let data: Vec<f32> = self.nodes[x.0].data.iter().map(|&v| 1.0 / v.max(1e-12)).collect();
        let o = self.push(r, c, data);
        self.record(Box::new(move |nodes, grads| {
            let d = grads[o.0].clone();
            for (i, v) in d.iter().enumerate() {
                let y = nodes[o.0].data[i];
                grads[x.0][i] -= v * y * y;
            }
        }));
        o
    }

    /// Multiplies every entry of `x` by the scalar var `s` (`[1 x 1]`).
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        let (sr, sc) = self.shape(s);
        if (sr, sc) != (1, 1) {
            return Err(FedError::Dim { op: "mul_scalar_var", lhs: vec![sr, sc], rhs: vec![1, 1] });
        }
        let (r, c) = self.shape(x);
        let sv = self.nodes[s.0].data[0];
        let data: Vec<f32> = self.nodes[x.0].data.iter().map(|&v| v * sv).collect();
        let o = self.push(r, c, data);
        self.record(Box::new(move |nodes, grads| {
            let d = grads[o.0].clone();
            let sv = nodes[s.0].data[0];
            for (i, v) in d.iter().enumerate() {
                grads[x.0][i] += v * sv;
            }
            let mut acc = 0.0f64;
            for (i, v) in d.iter().enumerate() {
                acc += *v as f64 * nodes[x.0].data[i] as f64;
            }
            grads[s.0][0] += acc as f32;
        }));
        Ok(o)
    }

    /// Row vector scaled to unit Euclidean norm (norm floored at 1e-12).
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let sq = self.mul(x, x)?;
        let norm_sq = self.sum_all(sq);
        let norm = self.sqrt(norm_sq);
        let inv = self.recip(norm);
        self.mul_scalar_var(x, inv)
    }

    /// Elementwise sqrt of non-negative input; derivative floored away from
    /// zero so distance terms stay finite.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let data: Vec<f32> = self.nodes[x.0].data.iter().map(|&v| v.max(0.0).sqrt()).collect();
        let o = self.push(r, c, data);
        self.record(Box::new(move |nodes, grads| {
            let d = grads[o.0].clone();
            for (i, v) in d.iter().enumerate() {
                let y = nodes[o.0].data[i].max(1e-6);
                grads[x.0][i] += v * 0.5 / y;
            }
        }));
        o
    }

    // ---- normalization and softmax ------------------------------------

    /// Row-wise layer normalization followed by affine gain/bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f32) -> Result<Var> {
        let (r, c) = self.shape(x);
        if c == 0 {
            return Err(FedError::Dim { op: "layer_norm", lhs: vec![r, c], rhs: vec![] });
        }
        for (name, v) in [("gain", gain), ("bias", bias)] {
            let (gr, gc) = self.shape(v);
            if gr != 1 || gc != c {
                let _ = name;
                return Err(FedError::Dim {
                    op: "layer_norm",
                    lhs: vec![r, c],
                    rhs: shape_of(&self.nodes[v.0]),
                });
            }
        }
        let mut data = vec![0.0f32; r * c];
        let mut xhat = vec![0.0f32; r * c];
        let mut inv_std = vec![0.0f32; r];
        for i in 0..r {
            let row = &self.nodes[x.0].data[i * c..(i + 1) * c];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / c as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps as f64).sqrt();
            inv_std[i] = inv as f32;
            for j in 0..c {
                let h = ((row[j] as f64 - mean) * inv) as f32;
                xhat[i * c + j] = h;
                data[i * c + j] =
                    h * self.nodes[gain.0].data[j] + self.nodes[bias.0].data[j];
            }
        }
        let o = self.push(r, c, data);
        self.record(Box::new(move |nodes, grads| {
            let d = grads[o.0].clone();
            for i in 0..r {
                let inv = inv_std[i] as f64;
                let mut sum_dh = 0.0f64;
                let mut sum_dh_h = 0.0f64;
                for j in 0..c {
                    let dh = d[i * c + j] as f64 * nodes[gain.0].data[j] as f64;
                    sum_dh += dh;
                    sum_dh_h += dh * xhat[i * c + j] as f64;
                }
                for j in 0..c {
                    let dh = d[i * c + j] as f64 * nodes[gain.0].data[j] as f64;
                    let h = xhat[i * c + j] as f64;
                    grads[x.0][i * c + j] +=
                        (inv * (dh - sum_dh / c as f64 - h * sum_dh_h / c as f64)) as f32;
                }
            }
            for j in 0..c {
                let mut dg = 0.0f64;
                let mut db = 0.0f64;
                for i in 0..r {
                    dg += d[i * c + j] as f64 * xhat[i * c + j] as f64;
                    db += d[i * c + j] as f64;
                }
                grads[gain.0][j] += dg as f32;
                grads[bias.0][j] += db as f32;
            }
        }));
        Ok(o)
    }

    /// Row-wise softmax, stabilized by max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if c == 0 {
            return Err(FedError::Dim { op: "softmax", lhs: vec![r, c], rhs: vec![] });
        }
        let mut data = vec![0.0f32; r * c];
        for i in 0..r {
            let row = &self.nodes[x.0].data[i * c..(i + 1) * c];
            softmax_into(row, &mut data[i * c..(i + 1) * c]);
        }
        let o = self.push(r, c, data);
        self.record(Box::new(move |nodes, grads| {
            let d = grads[o.0].clone();
            for i in 0..r {
                let y = &nodes[o.0].data[i * c..(i + 1) * c];
                let dot: f64 = d[i * c..(i + 1) * c]
                    .iter()
                    .zip(y)
                    .map(|(&dv, &yv)| dv as f64 * yv as f64)
                    .sum();
                for j in 0..c {
                    grads[x.0][i * c + j] +=
                        (y[j] as f64 * (d[i * c + j] as f64 - dot)) as f32;
                }
            }
        }));
        Ok(o)
    }

    // ---- shape ops ----------------------------------------------------

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start >= end || end > r {
            return Err(FedError::Contract(format!(
                "slice_rows: range {start}..{end} out of bounds for {r} rows"
            )));
        }
        let data = self.nodes[x.0].data[start * c..end * c].to_vec();
        let o = self.push(end - start, c, data);
        self.record(Box::new(move |_, grads| {
            let d = grads[o.0].clone();
            for (i, v) in d.iter().enumerate() {
                grads[x.0][start * c + i] += v;
            }
        }));
        Ok(o)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start >= end || end > c {
            return Err(FedError::Contract(format!(
                "slice_cols: range {start}..{end} out of bounds for {c} cols"
            )));
        }
        let w = end - start;
        let mut data = vec![0.0f32; r * w];
        for i in 0..r {
            data[i * w..(i + 1) * w]
                .copy_from_slice(&self.nodes[x.0].data[i * c + start..i * c + end]);
        }
        let o = self.push(r, w, data);
        self.record(Box::new(move |_, grads| {
            let d = grads[o.0].clone();
            for i in 0..r {
                for j in 0..w {
                    grads[x.0][i * c + start + j] += d[i * w + j];
                }
            }
        }));
        Ok(o)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(FedError::Contract("concat_rows: empty input".into()));
        }
        let (_, c) = self.shape(parts[0]);
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pc != c {
                return Err(FedError::Dim {
                    op: "concat_rows",
                    lhs: vec![rows, c],
                    rhs: shape_of(&self.nodes[p.0]),
                });
            }
            rows += pr;
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let o = self.push(rows, c, data);
        let parts: Vec<(usize, usize)> =
            parts.iter().map(|&p| (p.0, self.nodes[p.0].numel())).collect();
        self.record(Box::new(move |_, grads| {
            let d = grads[o.0].clone();
            let mut off = 0;
            for &(id, n) in &parts {
                for i in 0..n {
                    grads[id][i] += d[off + i];
                }
                off += n;
            }
        }));
        Ok(o)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(FedError::Contract("concat_cols: empty input".into()));
        }
        let (r, _) = self.shape(parts[0]);
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != r {
                return Err(FedError::Dim {
                    op: "concat_cols",
                    lhs: vec![r, total],
                    rhs: shape_of(&self.nodes[p.0]),
                });
            }
            widths.push(pc);
            total += pc;
        }
        let mut data = vec![0.0f32; r * total];
        let mut off = 0;
        for (idx, &p) in parts.iter().enumerate() {
            let w = widths[idx];
            for i in 0..r {
                data[i * total + off..i * total + off + w]
                    .copy_from_slice(&self.nodes[p.0].data[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let o = self.push(r, total, data);
        let parts: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.record(Box::new(move |_, grads| {
            let d = grads[o.0].clone();
            let mut off = 0;
            for (idx, &id) in parts.iter().enumerate() {
                let w = widths[idx];
                for i in 0..r {
                    for j in 0..w {
                        grads[id][i * w + j] += d[i * total + off + j];
                    }
                }
                off += w;
            }
        }));
        Ok(o)
    }

    /// Reinterprets the data with a new (rows, cols) of equal element count.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let n = self.nodes[x.0].numel();
        if rows * cols != n {
            return Err(FedError::Dim {
                op: "reshape",
                lhs: shape_of(&self.nodes[x.0]),
                rhs: vec![rows, cols],
            });
        }
        let data = self.nodes[x.0].data.clone();
        let o = self.push(rows, cols, data);
        self.record(Box::new(move |_, grads| {
            let d = grads[o.0].clone();
            acc(&mut grads[x.0], &d);
        }));
        Ok(o)
    }

    // ---- reductions and losses -----------------------------------------

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total: f64 = self.nodes[x.0].data.iter().map(|&v| v as f64).sum();
        let o = self.push(1, 1, vec![total as f32]);
        self.record(Box::new(move |_, grads| {
            let d = grads[o.0][0];
            for g in grads[x.0].iter_mut() {
                *g += d;
            }
        }));
        o
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].numel();
        let total: f64 = self.nodes[x.0].data.iter().map(|&v| v as f64).sum();
        let o = self.push(1, 1, vec![(total / n as f64) as f32]);
        self.record(Box::new(move |_, grads| {
            let d = grads[o.0][0] / n as f32;
            for g in grads[x.0].iter_mut() {
                *g += d;
            }
        }));
        o
    }

    /// Softmax cross-entropy of a `[1 x n]` logit row against `label`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let (r, n) = self.shape(logits);
        if r != 1 {
            return Err(FedError::Contract(format!(
                "cross_entropy: expected a [1 x n] logit row, got [{r} x {n}]"
            )));
        }
        if label >= n {
            return Err(FedError::Contract(format!(
                "cross_entropy: label {label} out of range for {n} classes"
            )));
        }
        let row = &self.nodes[logits.0].data;
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let lse: f64 = row.iter().map(|&v| ((v - max) as f64).exp()).sum::<f64>().ln()
            + max as f64;
        let loss = (lse - row[label] as f64) as f32;
        let o = self.push(1, 1, vec![loss]);
        self.record(Box::new(move |nodes, grads| {
            let d = grads[o.0][0];
            let row = &nodes[logits.0].data;
            let mut probs = vec![0.0f32; row.len()];
            softmax_into(row, &mut probs);
            for (j, &p) in probs.iter().enumerate() {
                let y = if j == label { 1.0 } else { 0.0 };
                grads[logits.0][j] += d * (p - y);
            }
        }));
        Ok(o)
    }

    /// Sums a non-empty list of same-shape vars.
    pub fn sum_vars(&mut self, vars: &[Var]) -> Result<Var> {
        let mut it = vars.iter();
        let first = *it
            .next()
            .ok_or_else(|| FedError::Contract("sum_vars: empty input".into()))?;
        let mut out = first;
        for &v in it {
            out = self.add(out, v)?;
        }
        Ok(out)
    }

    // ---- backward -------------------------------------------------------

    /// Seeds the scalar `loss` with 1 and replays the tape in reverse,
    /// filling gradient buffers for every node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.recording {
            return Err(FedError::Contract(
                "backward: graph was built in inference mode".into(),
            ));
        }
        if self.nodes[loss.0].numel() != 1 {
            return Err(FedError::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                shape_of(&self.nodes[loss.0])
            )));
        }
        self.grads = self.nodes.iter().map(|n| vec![0.0f32; n.numel()]).collect();
        self.grads[loss.0][0] = 1.0;
        for op in self.ops.iter().rev() {
            op(&self.nodes, &mut self.grads);
        }
        self.ran_backward = true;
        Ok(())
    }

    /// Adds the accumulated node gradients into the owning parameters'
    /// gradient buffers (trainable parameters only).
    pub fn scatter_param_grads(&self, set: &mut ParamSet) -> Result<()> {
        if !self.ran_backward {
            return Err(FedError::Contract(
                "scatter_param_grads: backward has not run".into(),
            ));
        }
        for &(node, pid) in &self.param_links {
            let p = set.get_mut(pid);
            if !p.trainable {
                continue;
            }
            let g = p.value.grad_mut();
            for (gv, nv) in g.iter_mut().zip(&self.grads[node]) {
                *gv += nv;
            }
        }
        Ok(())
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn tensor_rows_cols(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape.len() {
        1 => Ok((1, t.shape[0])),
        2 => Ok((t.shape[0], t.shape[1])),
        _ => Err(FedError::Dim { op: "graph-leaf", lhs: t.shape.clone(), rhs: vec![] }),
    }
}

fn zip_map(a: &[f32], b: &[f32], f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn acc(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn stable_sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_into(row: &[f32], out: &mut [f32]) {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = ((v - max) as f64).exp();
        *o = e as f32;
        sum += e;
    }
    for o in out.iter_mut() {
        *o = (*o as f64 / sum) as f32;
    }
}

// C[m x p] = A[m x k] . B[k x p]
// walks B row-contiguously, accumulating each output row in f64
fn mm(a: &[f32], b: &[f32], m: usize, k: usize, p: usize, out: &mut [f32]) {
    let mut acc = vec![0.0f64; p];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (l, &al) in arow.iter().enumerate() {
            let brow = &b[l * p..(l + 1) * p];
            let al = al as f64;
            for (s, &bv) in acc.iter_mut().zip(brow) {
                *s += al * bv as f64;
            }
        }
        for (o, &s) in out[i * p..(i + 1) * p].iter_mut().zip(&acc) {
            *o = s as f32;
        }
    }
}

// C[m x p] = A[m x k] . B[p x k]^T
fn mm_nt(a: &[f32], b: &[f32], m: usize, k: usize, p: usize, out: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..p {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0f64;
            for l in 0..k {
                s += arow[l] as f64 * brow[l] as f64;
            }
            out[i * p + j] = s as f32;
        }
    }
}

// out[m x p] += A[m x k] . B[k x p]
fn mm_acc(a: &[f32], b: &[f32], m: usize, k: usize, p: usize, out: &mut [f32]) {
    let mut acc = vec![0.0f64; p];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (l, &al) in arow.iter().enumerate() {
            let brow = &b[l * p..(l + 1) * p];
            let al = al as f64;
            for (s, &bv) in acc.iter_mut().zip(brow) {
                *s += al * bv as f64;
            }
        }
        for (o, &s) in out[i * p..(i + 1) * p].iter_mut().zip(&acc) {
            *o += s as f32;
        }
    }
}

// out[m x p] += A[m x k] . B[p x k]^T
fn mm_nt_acc(a: &[f32], b: &[f32], m: usize, k: usize, p: usize, out: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..p {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0f64;
            for l in 0..k {
                s += arow[l] as f64 * brow[l] as f64;
            }
            out[i * p + j] += s as f32;
        }
    }
}

// out[m x p] += A[k x m]^T . B[k x p]
fn mm_tn_acc(a: &[f32], b: &[f32], m: usize, k: usize, p: usize, out: &mut [f32]) {
    let mut acc = vec![0.0f64; m * p];
    for l in 0..k {
        let arow = &a[l * m..(l + 1) * m];
        let brow = &b[l * p..(l + 1) * p];
        for (i, &av) in arow.iter().enumerate() {
            let av = av as f64;
            let dst = &mut acc[i * p..(i + 1) * p];
            for (s, &bv) in dst.iter_mut().zip(brow) {
                *s += av * bv as f64;
            }
        }
    }
    for (o, &s) in out.iter_mut().zip(&acc) {
        *o += s as f32;
    }
}
