//! Reverse-mode differentiation over a linear op tape.
//!
//! Forward ops append nodes in execution order; [`Tape::backward`] walks them
//! in exact reverse order and accumulates vector-Jacobian products. A tape and
//! its vars belong to one forward/backward pass; build a fresh tape per step.

use crate::kernels;
use crate::tensor::{Result, Tensor, TensorError, NORM_FLOOR};

/// Handle to a value recorded on a [`Tape`]. Only valid for the tape that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

type Vjp = Box<dyn Fn(&Tape, &Tensor) -> Vec<(Var, Tensor)>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    vjp: Option<Vjp>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-parameter gradients produced by one backward pass, keyed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(TensorError::ShapeMismatch {
            op,
            expected: "a rank-2 tensor".into(),
            got: format!("{other:?}"),
        }),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a recorded node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record a leaf; gradient accumulation follows `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push_node(t, rg, None)
    }

    /// Record a non-trainable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_node(t, false, None)
    }

    /// Record a trainable leaf (cloning the given tensor).
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push_node(t.clone(), true, None)
    }

    fn push_node(&mut self, value: Tensor, requires_grad: bool, vjp: Option<Vjp>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            vjp,
        });
        Var(self.nodes.len() - 1)
    }

    /// Every computed op lands here: reject non-finite results outright.
    fn push_op(
        &mut self,
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        vjp: Vjp,
    ) -> Result<Var> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        let value = Tensor::new_unchecked(shape, data);
        Ok(self.push_node(value, requires_grad, Some(vjp)))
    }

    fn rg2(&self, a: Var, b: Var) -> bool {
        self.needs_grad(a) || self.needs_grad(b)
    }

    // ── elementwise ─────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                expected: format!("{:?}", av.shape()),
                got: format!("{:?}", bv.shape()),
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = av.shape().to_vec();
        let vjp: Vjp = Box::new(move |t, g| {
            let mut out = Vec::new();
            if t.needs_grad(a) {
                out.push((a, g.clone()));
            }
            if t.needs_grad(b) {
                out.push((b, g.clone()));
            }
            out
        });
        self.push_op("add", shape, data, self.rg2(a, b), vjp)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                expected: format!("{:?}", av.shape()),
                got: format!("{:?}", bv.shape()),
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = av.shape().to_vec();
        let vjp: Vjp = Box::new(move |t, g| {
            let mut out = Vec::new();
            if t.needs_grad(a) {
                let d = g
                    .data()
                    .iter()
                    .zip(t.value(b).data())
                    .map(|(gi, bi)| gi * bi)
                    .collect();
                out.push((a, Tensor::new_unchecked(g.shape().to_vec(), d)));
            }
            if t.needs_grad(b) {
                let d = g
                    .data()
                    .iter()
                    .zip(t.value(a).data())
                    .map(|(gi, ai)| gi * ai)
                    .collect();
                out.push((b, Tensor::new_unchecked(g.shape().to_vec(), d)));
            }
            out
        });
        self.push_op("mul", shape, data, self.rg2(a, b), vjp)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * factor).collect();
        let shape = av.shape().to_vec();
        let rg = self.needs_grad(a);
        let vjp: Vjp = Box::new(move |t, g| {
            if !t.needs_grad(a) {
                return vec![];
            }
            let d = g.data().iter().map(|gi| gi * factor).collect();
            vec![(a, Tensor::new_unchecked(g.shape().to_vec(), d))]
        });
        self.push_op("scale", shape, data, rg, vjp)
    }

    /// Add a length-d row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(b);
        let d = xv.last_dim();
        if bv.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                expected: format!("[{d}]"),
                got: format!("{:?}", bv.shape()),
            });
        }
        let rows = xv.rows();
        let mut data = xv.data().to_vec();
        for r in 0..rows {
            for (v, bi) in data[r * d..(r + 1) * d].iter_mut().zip(bv.data()) {
                *v += bi;
            }
        }
        let shape = xv.shape().to_vec();
        let vjp: Vjp = Box::new(move |t, g| {
            let mut out = Vec::new();
            if t.needs_grad(x) {
                out.push((x, g.clone()));
            }
            if t.needs_grad(b) {
                let mut db = vec![0.0; d];
                for r in 0..g.data().len() / d {
                    for (s, gi) in db.iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                        *s += gi;
                    }
                }
                out.push((b, Tensor::new_unchecked(vec![d], db)));
            }
            out
        });
        self.push_op("add_row", shape, data, self.rg2(x, b), vjp)
    }

    // ── linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                expected: format!("[{m}x{k}] . [{k}x_]"),
                got: format!("[{m}x{k}] . [{k2}x{n}]"),
            });
        }
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let vjp: Vjp = Box::new(move |t, g| {
            let mut out = Vec::new();
            if t.needs_grad(a) {
                let da = kernels::matmul_nt(g.data(), t.value(b).data(), m, n, k);
                out.push((a, Tensor::new_unchecked(vec![m, k], da)));
            }
            if t.needs_grad(b) {
                let db = kernels::matmul_tn(t.value(a).data(), g.data(), m, k, n);
                out.push((b, Tensor::new_unchecked(vec![k, n], db)));
            }
            out
        });
        self.push_op("matmul", vec![m, n], data, self.rg2(a, b), vjp)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(a), "transpose")?;
        let av = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.needs_grad(a);
        let vjp: Vjp = Box::new(move |t, g| {
            if !t.needs_grad(a) {
                return vec![];
            }
            let gd = g.data();
            let mut da = vec![0.0; m * n];
            for j in 0..n {
                for i in 0..m {
                    da[i * n + j] = gd[j * m + i];
                }
            }
            vec![(a, Tensor::new_unchecked(vec![m, n], da))]
        });
        self.push_op("transpose", vec![n, m], data, rg, vjp)
    }

    // ── gather / slice ──────────────────────────────────────────────

    /// Row gather from an embedding table; errors on out-of-range ids.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = dims2(self.value(table), "embedding_lookup")?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(TensorError::IdOutOfRange { id: bad, vocab });
        }
        self.gather_rows_impl("embedding_lookup", table, ids.to_vec(), vocab, d)
    }

    /// Row gather by explicit indices (caller guarantees bounds via dims).
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (rows, d) = dims2(self.value(x), "gather_rows")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IdOutOfRange { id: bad, vocab: rows });
        }
        self.gather_rows_impl("gather_rows", x, indices.to_vec(), rows, d)
    }

    fn gather_rows_impl(
        &mut self,
        op: &'static str,
        x: Var,
        indices: Vec<usize>,
        src_rows: usize,
        d: usize,
    ) -> Result<Var> {
        let xd = self.value(x).data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in &indices {
            data.extend_from_slice(&xd[i * d..(i + 1) * d]);
        }
        let out_rows = indices.len();
        let rg = self.needs_grad(x);
        let vjp: Vjp = Box::new(move |t, g| {
            if !t.needs_grad(x) {
                return vec![];
            }
            let mut dx = vec![0.0; src_rows * d];
            for (r, &i) in indices.iter().enumerate() {
                for (s, gi) in dx[i * d..(i + 1) * d].iter_mut().zip(&g.data()[r * d..(r + 1) * d])
                {
                    *s += gi;
                }
            }
            vec![(x, Tensor::new_unchecked(vec![src_rows, d], dx))]
        });
        self.push_op(op, vec![out_rows, d], data, rg, vjp)
    }

    pub fn slice_rows(&mut self, x: Var, lo: usize, hi: usize) -> Result<Var> {
        let (rows, d) = dims2(self.value(x), "slice_rows")?;
        if lo > hi || hi > rows {
            return Err(TensorError::Contract(format!(
                "slice_rows {lo}..{hi} out of bounds for {rows} rows"
            )));
        }
        let data = self.value(x).data()[lo * d..hi * d].to_vec();
        let rg = self.needs_grad(x);
        let vjp: Vjp = Box::new(move |t, g| {
            if !t.needs_grad(x) {
                return vec![];
            }
            let mut dx = vec![0.0; rows * d];
            dx[lo * d..hi * d].copy_from_slice(g.data());
            vec![(x, Tensor::new_unchecked(vec![rows, d], dx))]
        });
        self.push_op("slice_rows", vec![hi - lo, d], data, rg, vjp)
    }

    pub fn slice_cols(&mut self, x: Var, lo: usize, hi: usize) -> Result<Var> {
        let (rows, d) = dims2(self.value(x), "slice_cols")?;
        if lo > hi || hi > d {
            return Err(TensorError::Contract(format!(
                "slice_cols {lo}..{hi} out of bounds for {d} columns"
            )));
        }
        let w = hi - lo;
        let xd = self.value(x).data();
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&xd[r * d + lo..r * d + hi]);
        }
        let rg = self.needs_grad(x);
        let vjp: Vjp = Box::new(move |t, g| {
            if !t.needs_grad(x) {
                return vec![];
            }
            let mut dx = vec![0.0; rows * d];
            for r in 0..rows {
                dx[r * d + lo..r * d + hi].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
            }
            vec![(x, Tensor::new_unchecked(vec![rows, d], dx))]
        });
        self.push_op("slice_cols", vec![rows, w], data, rg, vjp)
    }

    /// Concatenate rank-2 tensors along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Contract("concat_cols of zero parts".into()));
        }
        let (rows, _) = dims2(self.value(parts[0]), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, w) = dims2(self.value(p), "concat_cols")?;
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    expected: format!("{rows} rows"),
                    got: format!("{r} rows"),
                });
            }
            widths.push(w);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                let pd = self.value(p).data();
                data.extend_from_slice(&pd[r * w..(r + 1) * w]);
            }
        }
        let parts = parts.to_vec();
        let rg = parts.iter().any(|&p| self.needs_grad(p));
        let vjp: Vjp = Box::new(move |t, g| {
            let mut out = Vec::new();
            let gd = g.data();
            let mut off = 0usize;
            for (&p, &w) in parts.iter().zip(&widths) {
                if t.needs_grad(p) {
                    let mut dp = vec![0.0; rows * w];
                    for r in 0..rows {
                        dp[r * w..(r + 1) * w]
                            .copy_from_slice(&gd[r * total + off..r * total + off + w]);
                    }
                    out.push((p, Tensor::new_unchecked(vec![rows, w], dp)));
                }
                off += w;
            }
            out
        });
        self.push_op("concat_cols", vec![rows, total], data, rg, vjp)
    }

    // ── nonlinearities ──────────────────────────────────────────────

    /// Exact-erf GELU: x * Phi(x).
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * std_normal_cdf(v)).collect();
        let shape = xv.shape().to_vec();
        let rg = self.needs_grad(x);
        let vjp: Vjp = Box::new(move |t, g| {
            if !t.needs_grad(x) {
                return vec![];
            }
            let d = t
                .value(x)
                .data()
                .iter()
                .zip(g.data())
                .map(|(&v, gi)| gi * (std_normal_cdf(v) + v * std_normal_pdf(v)))
                .collect();
            vec![(x, Tensor::new_unchecked(g.shape().to_vec(), d))]
        });
        self.push_op("gelu", shape, data, rg, vjp)
    }

    /// Per-row layer normalization over the last dimension, then affine.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if d == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                expected: "last dimension >= 1".into(),
                got: format!("{:?}", xv.shape()),
            });
        }
        if eps <= 0.0 {
            return Err(TensorError::Contract("layer_norm requires eps > 0".into()));
        }
        for (v, name) in [(gain, "gain"), (bias, "bias")] {
            if self.value(v).shape() != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    expected: format!("{name} of shape [{d}]"),
                    got: format!("{:?}", self.value(v).shape()),
                });
            }
        }
        let rows = xv.rows();
        let gd = self.value(gain).data();
        let bd = self.value(bias).data();
        let xd = self.value(x).data();
        let mut data = vec![0.0; rows * d];
        for r in 0..rows {
            let xr = &xd[r * d..(r + 1) * d];
            let (mean, inv) = row_moments(xr, eps);
            for j in 0..d {
                data[r * d + j] = gd[j] * (xr[j] - mean) * inv + bd[j];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.needs_grad(x) || self.rg2(gain, bias);
        let vjp: Vjp = Box::new(move |t, g| {
            let xd = t.value(x).data();
            let gaind = t.value(gain).data();
            let gradd = g.data();
            let mut out = Vec::new();
            let want_x = t.needs_grad(x);
            let want_gain = t.needs_grad(gain);
            let want_bias = t.needs_grad(bias);
            let mut dx = if want_x { vec![0.0; rows * d] } else { vec![] };
            let mut dgain = if want_gain { vec![0.0; d] } else { vec![] };
            let mut dbias = if want_bias { vec![0.0; d] } else { vec![] };
            for r in 0..rows {
                let xr = &xd[r * d..(r + 1) * d];
                let gr = &gradd[r * d..(r + 1) * d];
                let (mean, inv) = row_moments(xr, eps);
                let mut m1 = 0.0; // mean of dyg
                let mut m2 = 0.0; // mean of dyg * xhat
                for j in 0..d {
                    let xhat = (xr[j] - mean) * inv;
                    let dyg = gr[j] * gaind[j];
                    m1 += dyg;
                    m2 += dyg * xhat;
                    if want_gain {
                        dgain[j] += gr[j] * xhat;
                    }
                    if want_bias {
                        dbias[j] += gr[j];
                    }
                }
                m1 /= d as f64;
                m2 /= d as f64;
                if want_x {
                    for j in 0..d {
                        let xhat = (xr[j] - mean) * inv;
                        let dyg = gr[j] * gaind[j];
                        dx[r * d + j] = inv * (dyg - m1 - xhat * m2);
                    }
                }
            }
            if want_x {
                out.push((x, Tensor::new_unchecked(g.shape().to_vec(), dx)));
            }
            if want_gain {
                out.push((gain, Tensor::new_unchecked(vec![d], dgain)));
            }
            if want_bias {
                out.push((bias, Tensor::new_unchecked(vec![d], dbias)));
            }
            out
        });
        self.push_op("layer_norm", shape, data, rg, vjp)
    }

    /// Max-subtracted softmax over the last dimension.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.last_dim();
        if n == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_rows",
                expected: "last dimension >= 1".into(),
                got: format!("{:?}", xv.shape()),
            });
        }
        let rows = xv.rows();
        let xd = xv.data();
        let mut data = vec![0.0; rows * n];
        for r in 0..rows {
            softmax_row(&xd[r * n..(r + 1) * n], &mut data[r * n..(r + 1) * n]);
        }
        let shape = xv.shape().to_vec();
        let rg = self.needs_grad(x);
        let out_id = self.nodes.len();
        let vjp: Vjp = Box::new(move |t, g| {
            if !t.needs_grad(x) {
                return vec![];
            }
            let y = t.value(Var(out_id)).data();
            let gd = g.data();
            let mut dx = vec![0.0; y.len()];
            for r in 0..y.len() / n {
                let yr = &y[r * n..(r + 1) * n];
                let gr = &gd[r * n..(r + 1) * n];
                let dot: f64 = yr.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                for j in 0..n {
                    dx[r * n + j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![(x, Tensor::new_unchecked(g.shape().to_vec(), dx))]
        });
        self.push_op("softmax_rows", shape, data, rg, vjp)
    }

    /// Scale every row to unit Euclidean norm, denominator clamped below by
    /// the shared norm floor.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if d == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "normalize_rows",
                expected: "last dimension >= 1".into(),
                got: format!("{:?}", xv.shape()),
            });
        }
        let rows = xv.rows();
        let xd = xv.data();
        let mut data = vec![0.0; rows * d];
        for r in 0..rows {
            let xr = &xd[r * d..(r + 1) * d];
            let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
            let m = norm.max(NORM_FLOOR);
            for j in 0..d {
                data[r * d + j] = xr[j] / m;
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.needs_grad(x);
        let out_id = self.nodes.len();
        let vjp: Vjp = Box::new(move |t, g| {
            if !t.needs_grad(x) {
                return vec![];
            }
            let xd = t.value(x).data();
            let y = t.value(Var(out_id)).data();
            let gd = g.data();
            let mut dx = vec![0.0; xd.len()];
            for r in 0..xd.len() / d {
                let xr = &xd[r * d..(r + 1) * d];
                let yr = &y[r * d..(r + 1) * d];
                let gr = &gd[r * d..(r + 1) * d];
                let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > NORM_FLOOR {
                    let dot: f64 = gr.iter().zip(yr).map(|(gi, yi)| gi * yi).sum();
                    for j in 0..d {
                        dx[r * d + j] = (gr[j] - yr[j] * dot) / norm;
                    }
                } else {
                    for j in 0..d {
                        dx[r * d + j] = gr[j] / NORM_FLOOR;
                    }
                }
            }
            vec![(x, Tensor::new_unchecked(g.shape().to_vec(), dx))]
        });
        self.push_op("normalize_rows", shape, data, rg, vjp)
    }

    // ── reductions / losses ─────────────────────────────────────────

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let total: f64 = xv.data().iter().sum();
        let shape = xv.shape().to_vec();
        let numel = xv.numel();
        let rg = self.needs_grad(x);
        let vjp: Vjp = Box::new(move |t, g| {
            if !t.needs_grad(x) {
                return vec![];
            }
            let gv = g.data()[0];
            vec![(x, Tensor::new_unchecked(shape.clone(), vec![gv; numel]))]
        });
        self.push_op("sum", vec![], vec![total], rg, vjp)
    }

    /// Summed negative log likelihood of `targets` under per-row
    /// probability distributions `p` (rows of a softmax output).
    pub fn nll_sum(&mut self, p: Var, targets: &[usize]) -> Result<Var> {
        let (rows, v) = dims2(self.value(p), "nll_sum")?;
        if targets.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "nll_sum",
                expected: format!("{rows} targets"),
                got: format!("{}", targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(TensorError::IdOutOfRange { id: bad, vocab: v });
        }
        let pd = self.value(p).data();
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            total -= pd[r * v + t].ln();
        }
        let targets = targets.to_vec();
        let rg = self.needs_grad(p);
        let vjp: Vjp = Box::new(move |t, g| {
            if !t.needs_grad(p) {
                return vec![];
            }
            let pd = t.value(p).data();
            let gv = g.data()[0];
            let mut dp = vec![0.0; pd.len()];
            for (r, &tt) in targets.iter().enumerate() {
                dp[r * v + tt] = -gv / pd[r * v + tt];
            }
            vec![(p, Tensor::new_unchecked(vec![rows, v], dp))]
        });
        self.push_op("nll_sum", vec![], vec![total], rg, vjp)
    }

    /// Cosine similarity of two equal-length vectors as a differentiable
    /// scalar. Shares the floor-clamped normalization primitive.
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "cosine_sim",
                expected: format!("{:?}", self.value(a).shape()),
                got: format!("{:?}", self.value(b).shape()),
            });
        }
        let na = self.normalize_rows(a)?;
        let nb = self.normalize_rows(b)?;
        let prod = self.mul(na, nb)?;
        self.sum(prod)
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Returns gradients for every
    /// grad-requiring leaf reachable from `loss`; unused grad-requiring
    /// leaves recorded before `loss` get exact zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = &self.nodes[loss.0];
        if !node.value.is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(vjp) = &self.nodes[i].vjp else {
                continue; // leaf: keep its accumulated gradient
            };
            let g = grads[i].take().expect("checked above");
            for (v, contrib) in vjp(self, &g) {
                debug_assert!(v.0 < i, "vjp must point at earlier nodes");
                match &mut grads[v.0] {
                    Some(acc) => acc.add_in_place(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        // Exact zeros for trainable leaves the loss never touched.
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && node.vjp.is_none() && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads })
    }
}

fn row_moments(xr: &[f64], eps: f64) -> (f64, f64) {
    let d = xr.len() as f64;
    let mean = xr.iter().sum::<f64>() / d;
    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + eps).sqrt())
}

fn softmax_row(xr: &[f64], out: &mut [f64]) {
    let max = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(xr) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
