//! Primitive forward implementations and their backward rules.

use super::{DiffError, DiffResult, Node, Op, Tape, Tensor, TensorRef};

/// Decompose a shape around `axis` into (outer, k, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let k = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, k, inner)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus_stable(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// f(a[i], b[i]) with leading-axis (suffix) broadcasting.
struct BinaryPlan {
    out_shape: Vec<usize>,
    a_len: usize,
    b_len: usize,
}

impl Tape {
    fn binary_plan(
        &self,
        op: &'static str,
        a: TensorRef,
        b: TensorRef,
    ) -> DiffResult<BinaryPlan> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let ok = if sa.len() >= sb.len() {
            sa[sa.len() - sb.len()..] == *sb
        } else {
            sb[sb.len() - sa.len()..] == *sa
        };
        if !ok {
            return Err(DiffError::ShapeMismatch {
                op,
                detail: format!("{sa:?} vs {sb:?}"),
            });
        }
        let out_shape = if sa.len() >= sb.len() { sa } else { sb }.to_vec();
        Ok(BinaryPlan {
            out_shape,
            a_len: self.tensor(a).len(),
            b_len: self.tensor(b).len(),
        })
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: TensorRef,
        b: TensorRef,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> DiffResult<TensorRef> {
        let plan = self.binary_plan(name, a, b)?;
        let out_len = plan.out_shape.iter().product();
        let av = self.values(a);
        let bv = self.values(b);
        let mut values = Vec::with_capacity(out_len);
        for i in 0..out_len {
            values.push(f(av[i % plan.a_len], bv[i % plan.b_len]));
        }
        let requires_grad = self.requires_grad(a) || self.requires_grad(b);
        self.push(
            name,
            Node {
                tensor: Tensor::new(plan.out_shape, values),
                requires_grad,
                op,
            },
        )
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> DiffResult<TensorRef> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> DiffResult<TensorRef> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> DiffResult<TensorRef> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: TensorRef, b: TensorRef) -> DiffResult<TensorRef> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Multiply by a compile-time scalar without adding a leaf.
    pub fn scale(&mut self, x: TensorRef, c: f64) -> DiffResult<TensorRef> {
        let s = self.scalar_const(c);
        self.mul(x, s)
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: TensorRef,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> DiffResult<TensorRef> {
        let values = self.values(x).iter().map(|&v| f(v)).collect();
        let node = Node {
            tensor: Tensor::new(self.shape(x).to_vec(), values),
            requires_grad: self.requires_grad(x),
            op,
        };
        self.push(name, node)
    }

    pub fn exp(&mut self, x: TensorRef) -> DiffResult<TensorRef> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: TensorRef) -> DiffResult<TensorRef> {
        self.unary("log", x, f64::ln, Op::Log(x))
    }

    /// Elementwise x^c for a constant exponent.
    pub fn power(&mut self, x: TensorRef, c: f64) -> DiffResult<TensorRef> {
        self.unary("power", x, |v| v.powf(c), Op::PowerConst(x, c))
    }

    pub fn softplus(&mut self, x: TensorRef) -> DiffResult<TensorRef> {
        self.unary("softplus", x, softplus_stable, Op::Softplus(x))
    }

    pub fn silu(&mut self, x: TensorRef) -> DiffResult<TensorRef> {
        self.unary("silu", x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> DiffResult<TensorRef> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                detail: format!("{sa:?} @ {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        mm(self.values(a), self.values(b), m, k, n, &mut out);
        let requires_grad = self.requires_grad(a) || self.requires_grad(b);
        self.push(
            "matmul",
            Node {
                tensor: Tensor::new(vec![m, n], out),
                requires_grad,
                op: Op::Matmul(a, b),
            },
        )
    }

    pub fn softmax(&mut self, x: TensorRef, axis: usize) -> DiffResult<TensorRef> {
        self.softmax_impl(x, axis, false)
    }

    pub fn log_softmax(&mut self, x: TensorRef, axis: usize) -> DiffResult<TensorRef> {
        self.softmax_impl(x, axis, true)
    }

    fn softmax_impl(&mut self, x: TensorRef, axis: usize, log: bool) -> DiffResult<TensorRef> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(DiffError::ShapeMismatch {
                op: "softmax",
                detail: format!("axis {axis} out of range for {shape:?}"),
            });
        }
        let (outer, k, inner) = axis_split(&shape, axis);
        let xv = self.values(x);
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| o * k * inner + a * inner + i;
                let max = (0..k).map(|a| xv[at(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..k {
                    z += (xv[at(a)] - max).exp();
                }
                if log {
                    let lz = z.ln() + max;
                    for a in 0..k {
                        out[at(a)] = xv[at(a)] - lz;
                    }
                } else {
                    for a in 0..k {
                        out[at(a)] = (xv[at(a)] - max).exp() / z;
                    }
                }
            }
        }
        let requires_grad = self.requires_grad(x);
        let op = if log {
            Op::LogSoftmax(x, axis)
        } else {
            Op::Softmax(x, axis)
        };
        self.push(
            if log { "log_softmax" } else { "softmax" },
            Node {
                tensor: Tensor::new(shape, out),
                requires_grad,
                op,
            },
        )
    }

    /// Normalize along `axis` (biased variance, eps 1e-5), then apply the
    /// per-coordinate scale and shift vectors of length `shape[axis]`.
    pub fn layer_norm(
        &mut self,
        x: TensorRef,
        scale: TensorRef,
        shift: TensorRef,
        axis: usize,
    ) -> DiffResult<TensorRef> {
        const EPS: f64 = 1e-5;
        let shape = self.shape(x).to_vec();
        if axis >= shape.len()
            || self.shape(scale) != [shape[axis]]
            || self.shape(shift) != [shape[axis]]
        {
            return Err(DiffError::ShapeMismatch {
                op: "layer_norm",
                detail: format!(
                    "x {shape:?} axis {axis}, scale {:?}, shift {:?}",
                    self.shape(scale),
                    self.shape(shift)
                ),
            });
        }
        let (outer, k, inner) = axis_split(&shape, axis);
        let xv = self.values(x);
        let sv = self.values(scale).to_vec();
        let bv = self.values(shift).to_vec();
        let mut out = vec![0.0; xv.len()];
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_stds = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| o * k * inner + a * inner + i;
                let mean: f64 = (0..k).map(|a| xv[at(a)]).sum::<f64>() / k as f64;
                let var: f64 =
                    (0..k).map(|a| (xv[at(a)] - mean).powi(2)).sum::<f64>() / k as f64;
                let inv_std = 1.0 / (var + EPS).sqrt();
                inv_stds[o * inner + i] = inv_std;
                for a in 0..k {
                    let h = (xv[at(a)] - mean) * inv_std;
                    xhat[at(a)] = h;
                    out[at(a)] = h * sv[a] + bv[a];
                }
            }
        }
        let requires_grad =
            self.requires_grad(x) || self.requires_grad(scale) || self.requires_grad(shift);
        self.push(
            "layer_norm",
            Node {
                tensor: Tensor::new(shape, out),
                requires_grad,
                op: Op::LayerNorm {
                    x,
                    scale,
                    shift,
                    axis,
                    saved: (xhat, inv_stds),
                },
            },
        )
    }

    /// Gather rows of a 2D table; gradients scatter-add back into the table.
    pub fn embedding_lookup(
        &mut self,
        table: TensorRef,
        indices: &[usize],
    ) -> DiffResult<TensorRef> {
        let ts = self.shape(table);
        if ts.len() != 2 {
            return Err(DiffError::ShapeMismatch {
                op: "embedding_lookup",
                detail: format!("table must be 2D, got {ts:?}"),
            });
        }
        let (v, d) = (ts[0], ts[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(DiffError::ShapeMismatch {
                op: "embedding_lookup",
                detail: format!("index {bad} out of range for table with {v} rows"),
            });
        }
        let tv = self.values(table);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let requires_grad = self.requires_grad(table);
        self.push(
            "embedding_lookup",
            Node {
                tensor: Tensor::new(vec![indices.len(), d], out),
                requires_grad,
                op: Op::EmbeddingLookup {
                    table,
                    indices: indices.to_vec(),
                },
            },
        )
    }

    pub fn concat(&mut self, parts: &[TensorRef], axis: usize) -> DiffResult<TensorRef> {
        if parts.is_empty() {
            return Err(DiffError::ShapeMismatch {
                op: "concat",
                detail: "no parts".into(),
            });
        }
        let base = self.shape(parts[0]).to_vec();
        if axis >= base.len() {
            return Err(DiffError::ShapeMismatch {
                op: "concat",
                detail: format!("axis {axis} out of range for {base:?}"),
            });
        }
        let mut k_total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(DiffError::ShapeMismatch {
                    op: "concat",
                    detail: format!("{s:?} incompatible with {base:?} along axis {axis}"),
                });
            }
            k_total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = k_total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let kp = self.shape(p)[axis];
                let pv = self.values(p);
                let start = o * kp * inner;
                out.extend_from_slice(&pv[start..start + kp * inner]);
            }
        }
        let requires_grad = parts.iter().any(|&p| self.requires_grad(p));
        self.push(
            "concat",
            Node {
                tensor: Tensor::new(out_shape, out),
                requires_grad,
                op: Op::Concat {
                    parts: parts.to_vec(),
                    axis,
                },
            },
        )
    }

    pub fn slice(
        &mut self,
        x: TensorRef,
        axis: usize,
        start: usize,
        len: usize,
    ) -> DiffResult<TensorRef> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(DiffError::ShapeMismatch {
                op: "slice",
                detail: format!("axis {axis} [{start}..{}] of {shape:?}", start + len),
            });
        }
        let (outer, k, inner) = axis_split(&shape, axis);
        let xv = self.values(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * k * inner + start * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let requires_grad = self.requires_grad(x);
        self.push(
            "slice",
            Node {
                tensor: Tensor::new(out_shape, out),
                requires_grad,
                op: Op::Slice { x, axis, start },
            },
        )
    }

    pub fn transpose(&mut self, x: TensorRef, perm: &[usize]) -> DiffResult<TensorRef> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm.iter().all(|&p| {
                if p >= shape.len() || seen[p] {
                    false
                } else {
                    seen[p] = true;
                    true
                }
            });
        if !valid {
            return Err(DiffError::ShapeMismatch {
                op: "transpose",
                detail: format!("perm {perm:?} invalid for {shape:?}"),
            });
        }
        let out = transpose_values(self.values(x), &shape, perm);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let requires_grad = self.requires_grad(x);
        self.push(
            "transpose",
            Node {
                tensor: Tensor::new(out_shape, out),
                requires_grad,
                op: Op::Transpose {
                    x,
                    perm: perm.to_vec(),
                },
            },
        )
    }

    /// Sum over one axis, or over everything when `axis` is None.
    pub fn sum(&mut self, x: TensorRef, axis: Option<usize>) -> DiffResult<TensorRef> {
        self.reduce("sum", x, axis, false)
    }

    pub fn mean(&mut self, x: TensorRef, axis: Option<usize>) -> DiffResult<TensorRef> {
        self.reduce("mean", x, axis, true)
    }

    fn reduce(
        &mut self,
        name: &'static str,
        x: TensorRef,
        axis: Option<usize>,
        average: bool,
    ) -> DiffResult<TensorRef> {
        let shape = self.shape(x).to_vec();
        let xv = self.values(x);
        let (out_shape, out) = match axis {
            None => {
                let mut s: f64 = xv.iter().sum();
                if average {
                    s /= xv.len().max(1) as f64;
                }
                (vec![], vec![s])
            }
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(DiffError::ShapeMismatch {
                        op: name,
                        detail: format!("axis {ax} out of range for {shape:?}"),
                    });
                }
                let (outer, k, inner) = axis_split(&shape, ax);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for a in 0..k {
                        for i in 0..inner {
                            out[o * inner + i] += xv[o * k * inner + a * inner + i];
                        }
                    }
                }
                if average {
                    for v in out.iter_mut() {
                        *v /= k as f64;
                    }
                }
                let mut out_shape = shape.clone();
                out_shape.remove(ax);
                (out_shape, out)
            }
        };
        let requires_grad = self.requires_grad(x);
        let op = if average {
            Op::Mean { x, axis }
        } else {
            Op::Sum { x, axis }
        };
        self.push(
            name,
            Node {
                tensor: Tensor::new(out_shape, out),
                requires_grad,
                op,
            },
        )
    }

    /// Replace entries where `mask` is nonzero by `value`; gradients flow
    /// only through unmasked entries.
    pub fn masked_fill(
        &mut self,
        x: TensorRef,
        mask: &[f64],
        value: f64,
    ) -> DiffResult<TensorRef> {
        let shape = self.shape(x).to_vec();
        if mask.len() != self.tensor(x).len() {
            return Err(DiffError::ShapeMismatch {
                op: "masked_fill",
                detail: format!("mask length {} vs tensor {shape:?}", mask.len()),
            });
        }
        let out = self
            .values(x)
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m != 0.0 { value } else { v })
            .collect();
        let requires_grad = self.requires_grad(x);
        self.push(
            "masked_fill",
            Node {
                tensor: Tensor::new(shape, out),
                requires_grad,
                op: Op::MaskedFill {
                    x,
                    mask: mask.to_vec(),
                },
            },
        )
    }

    /// Scale row i of a 2D tensor by s[i].
    pub fn scale_rows(&mut self, x: TensorRef, s: TensorRef) -> DiffResult<TensorRef> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || self.shape(s) != [xs[0]] {
            return Err(DiffError::ShapeMismatch {
                op: "scale_rows",
                detail: format!("x {xs:?}, s {:?}", self.shape(s)),
            });
        }
        let (r, c) = (xs[0], xs[1]);
        let xv = self.values(x);
        let sv = self.values(s);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(xv[i * c + j] * sv[i]);
            }
        }
        let requires_grad = self.requires_grad(x) || self.requires_grad(s);
        self.push(
            "scale_rows",
            Node {
                tensor: Tensor::new(xs, out),
                requires_grad,
                op: Op::ScaleRows { x, s },
            },
        )
    }

    pub fn reshape(&mut self, x: TensorRef, shape: &[usize]) -> DiffResult<TensorRef> {
        if shape.iter().product::<usize>() != self.tensor(x).len() {
            return Err(DiffError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", self.shape(x)),
            });
        }
        let values = self.values(x).to_vec();
        let requires_grad = self.requires_grad(x);
        self.push(
            "reshape",
            Node {
                tensor: Tensor::new(shape.to_vec(), values),
                requires_grad,
                op: Op::Reshape(x),
            },
        )
    }

    /// Straight-through-compatible Gumbel-softmax relaxation over the last
    /// axis: softmax((logits + noise) / temperature). The noise tensor holds
    /// pre-drawn Gumbel samples; the hard/straight-through combination lives
    /// in the corruption module.
    pub fn gumbel_softmax(
        &mut self,
        logits: TensorRef,
        temperature: f64,
        noise: TensorRef,
    ) -> DiffResult<TensorRef> {
        if temperature <= 0.0 {
            return Err(DiffError::NonPositiveTemperature(temperature));
        }
        if self.shape(logits) != self.shape(noise) {
            return Err(DiffError::ShapeMismatch {
                op: "gumbel_softmax",
                detail: format!("{:?} vs {:?}", self.shape(logits), self.shape(noise)),
            });
        }
        let last = self.shape(logits).len() - 1;
        let z = self.add(logits, noise)?;
        let scaled = self.scale(z, 1.0 / temperature)?;
        self.softmax(scaled, last)
    }

    pub(crate) fn propagate(
        &self,
        idx: usize,
        grad: &[f64],
        grads: &mut Vec<Option<Vec<f64>>>,
    ) {
        let node = &self.nodes[idx];
        let accum = |grads: &mut Vec<Option<Vec<f64>>>,
                     tape: &Tape,
                     r: TensorRef,
                     f: &mut dyn FnMut(&mut [f64])| {
            if !tape.requires_grad(r) {
                return;
            }
            let slot = grads[r.0].get_or_insert_with(|| vec![0.0; tape.tensor(r).len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for r in [*a, *b] {
                    accum(grads, self, r, &mut |g| {
                        let len = g.len();
                        for (i, &dv) in grad.iter().enumerate() {
                            g[i % len] += dv;
                        }
                    });
                }
            }
            Op::Sub(a, b) => {
                accum(grads, self, *a, &mut |g| {
                    let len = g.len();
                    for (i, &dv) in grad.iter().enumerate() {
                        g[i % len] += dv;
                    }
                });
                accum(grads, self, *b, &mut |g| {
                    let len = g.len();
                    for (i, &dv) in grad.iter().enumerate() {
                        g[i % len] -= dv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.values(*a);
                let bv = self.values(*b);
                accum(grads, self, *a, &mut |g| {
                    let len = g.len();
                    for (i, &dv) in grad.iter().enumerate() {
                        g[i % len] += dv * bv[i % bv.len()];
                    }
                });
                accum(grads, self, *b, &mut |g| {
                    let len = g.len();
                    for (i, &dv) in grad.iter().enumerate() {
                        g[i % len] += dv * av[i % av.len()];
                    }
                });
            }
            Op::Div(a, b) => {
                let av = self.values(*a);
                let bv = self.values(*b);
                accum(grads, self, *a, &mut |g| {
                    let len = g.len();
                    for (i, &dv) in grad.iter().enumerate() {
                        g[i % len] += dv / bv[i % bv.len()];
                    }
                });
                accum(grads, self, *b, &mut |g| {
                    let len = g.len();
                    for (i, &dv) in grad.iter().enumerate() {
                        let bb = bv[i % bv.len()];
                        g[i % len] -= dv * av[i % av.len()] / (bb * bb);
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.values(*a);
                let bv = self.values(*b);
                accum(grads, self, *a, &mut |g| {
                    // dA = dY @ B^T
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            let dy_row = &grad[i * n..(i + 1) * n];
                            let b_row = &bv[p * n..(p + 1) * n];
                            for j in 0..n {
                                acc += dy_row[j] * b_row[j];
                            }
                            g[i * k + p] += acc;
                        }
                    }
                });
                accum(grads, self, *b, &mut |g| {
                    // dB = A^T @ dY
                    for i in 0..m {
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip != 0.0 {
                                let dy_row = &grad[i * n..(i + 1) * n];
                                let g_row = &mut g[p * n..(p + 1) * n];
                                for j in 0..n {
                                    g_row[j] += a_ip * dy_row[j];
                                }
                            }
                        }
                    }
                });
            }
            Op::Exp(x) => {
                let yv = &node.tensor.values;
                accum(grads, self, *x, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += grad[i] * yv[i];
                    }
                });
            }
            Op::Log(x) => {
                let xv = self.values(*x);
                accum(grads, self, *x, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += grad[i] / xv[i];
                    }
                });
            }
            Op::PowerConst(x, c) => {
                let xv = self.values(*x);
                let c = *c;
                accum(grads, self, *x, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += grad[i] * c * xv[i].powf(c - 1.0);
                    }
                });
            }
            Op::Softplus(x) => {
                let xv = self.values(*x);
                accum(grads, self, *x, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += grad[i] * sigmoid(xv[i]);
                    }
                });
            }
            Op::Silu(x) => {
                let xv = self.values(*x);
                accum(grads, self, *x, &mut |g| {
                    for i in 0..g.len() {
                        let s = sigmoid(xv[i]);
                        g[i] += grad[i] * (s + xv[i] * s * (1.0 - s));
                    }
                });
            }
            Op::Softmax(x, axis) => {
                let yv = &node.tensor.values;
                let (outer, k, inner) = axis_split(&node.tensor.shape, *axis);
                accum(grads, self, *x, &mut |g| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| o * k * inner + a * inner + i;
                            let dot: f64 = (0..k).map(|a| grad[at(a)] * yv[at(a)]).sum();
                            for a in 0..k {
                                g[at(a)] += yv[at(a)] * (grad[at(a)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax(x, axis) => {
                let yv = &node.tensor.values;
                let (outer, k, inner) = axis_split(&node.tensor.shape, *axis);
                accum(grads, self, *x, &mut |g| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| o * k * inner + a * inner + i;
                            let total: f64 = (0..k).map(|a| grad[at(a)]).sum();
                            for a in 0..k {
                                g[at(a)] += grad[at(a)] - yv[at(a)].exp() * total;
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                scale,
                shift,
                axis,
                saved: (xhat, inv_stds),
            } => {
                let (outer, k, inner) = axis_split(&node.tensor.shape, *axis);
                let sv = self.values(*scale);
                accum(grads, self, *x, &mut |g| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| o * k * inner + a * inner + i;
                            let inv_std = inv_stds[o * inner + i];
                            let mut mean_dxhat = 0.0;
                            let mut mean_dxhat_xhat = 0.0;
                            for a in 0..k {
                                let dxh = grad[at(a)] * sv[a];
                                mean_dxhat += dxh;
                                mean_dxhat_xhat += dxh * xhat[at(a)];
                            }
                            mean_dxhat /= k as f64;
                            mean_dxhat_xhat /= k as f64;
                            for a in 0..k {
                                let dxh = grad[at(a)] * sv[a];
                                g[at(a)] += inv_std
                                    * (dxh - mean_dxhat - xhat[at(a)] * mean_dxhat_xhat);
                            }
                        }
                    }
                });
                accum(grads, self, *scale, &mut |g| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| o * k * inner + a * inner + i;
                            for a in 0..k {
                                g[a] += grad[at(a)] * xhat[at(a)];
                            }
                        }
                    }
                });
                accum(grads, self, *shift, &mut |g| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| o * k * inner + a * inner + i;
                            for a in 0..k {
                                g[a] += grad[at(a)];
                            }
                        }
                    }
                });
            }
            Op::EmbeddingLookup { table, indices } => {
                let d = self.shape(*table)[1];
                accum(grads, self, *table, &mut |g| {
                    for (row, &i) in indices.iter().enumerate() {
                        let src = &grad[row * d..(row + 1) * d];
                        let dst = &mut g[i * d..(i + 1) * d];
                        for j in 0..d {
                            dst[j] += src[j];
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = axis_split(&node.tensor.shape, *axis);
                let k_total = node.tensor.shape[*axis];
                let mut offset = 0;
                for &p in parts {
                    let kp = self.shape(p)[*axis];
                    let off = offset;
                    accum(grads, self, p, &mut |g| {
                        for o in 0..outer {
                            let src = o * k_total * inner + off * inner;
                            let dst = o * kp * inner;
                            for t in 0..kp * inner {
                                g[dst + t] += grad[src + t];
                            }
                        }
                    });
                    offset += kp;
                }
            }
            Op::Slice { x, axis, start } => {
                let in_shape = self.shape(*x);
                let (outer, k, inner) = axis_split(in_shape, *axis);
                let len = node.tensor.shape[*axis];
                accum(grads, self, *x, &mut |g| {
                    for o in 0..outer {
                        let dst = o * k * inner + start * inner;
                        let src = o * len * inner;
                        for t in 0..len * inner {
                            g[dst + t] += grad[src + t];
                        }
                    }
                });
            }
            Op::Transpose { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let back = transpose_values(grad, &node.tensor.shape, &inv);
                accum(grads, self, *x, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += back[i];
                    }
                });
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let average = matches!(node.op, Op::Mean { .. });
                let in_shape = self.shape(*x).to_vec();
                match axis {
                    None => {
                        let total = in_shape.iter().product::<usize>().max(1);
                        let scale = if average { 1.0 / total as f64 } else { 1.0 };
                        accum(grads, self, *x, &mut |g| {
                            for v in g.iter_mut() {
                                *v += grad[0] * scale;
                            }
                        });
                    }
                    Some(ax) => {
                        let (outer, k, inner) = axis_split(&in_shape, *ax);
                        let scale = if average { 1.0 / k as f64 } else { 1.0 };
                        accum(grads, self, *x, &mut |g| {
                            for o in 0..outer {
                                for a in 0..k {
                                    for i in 0..inner {
                                        g[o * k * inner + a * inner + i] +=
                                            grad[o * inner + i] * scale;
                                    }
                                }
                            }
                        });
                    }
                }
            }
            Op::MaskedFill { x, mask } => {
                accum(grads, self, *x, &mut |g| {
                    for i in 0..g.len() {
                        if mask[i] == 0.0 {
                            g[i] += grad[i];
                        }
                    }
                });
            }
            Op::ScaleRows { x, s } => {
                let c = node.tensor.shape[1];
                let xv = self.values(*x);
                let sv = self.values(*s);
                accum(grads, self, *x, &mut |g| {
                    for i in 0..sv.len() {
                        for j in 0..c {
                            g[i * c + j] += grad[i * c + j] * sv[i];
                        }
                    }
                });
                accum(grads, self, *s, &mut |g| {
                    for i in 0..g.len() {
                        let mut acc = 0.0;
                        for j in 0..c {
                            acc += grad[i * c + j] * xv[i * c + j];
                        }
                        g[i] += acc;
                    }
                });
            }
            Op::Reshape(x) => {
                accum(grads, self, *x, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += grad[i];
                    }
                });
            }
        }
    }
}

/// out[i,j] += sum_p a[i,p] * b[p,j]
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                let b_row = &b[p * n..(p + 1) * n];
                for j in 0..n {
                    out_row[j] += av * b_row[j];
                }
            }
        }
    }
}

fn transpose_values(values: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let ndim = shape.len();
    let mut in_strides = vec![1usize; ndim];
    for i in (0..ndim.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut out = vec![0.0; values.len()];
    let mut idx = vec![0usize; ndim];
    for slot in out.iter_mut() {
        let mut src = 0;
        for (d, &i) in idx.iter().enumerate() {
            src += i * in_strides[perm[d]];
        }
        *slot = values[src];
        for d in (0..ndim).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{Dtype, Tape, Tensor};

    #[test]
    fn softplus_at_zero_is_ln_two() {
        let mut tape = Tape::new(Dtype::F64);
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.softplus(x).unwrap();
        assert!((tape.value_scalar(y) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softmax_of_uniform_logits() {
        let mut tape = Tape::new(Dtype::F64);
        let x = tape.leaf(Tensor::new(vec![5], vec![0.3; 5]));
        let y = tape.softmax(x, 0).unwrap();
        for &v in tape.values(y) {
            assert!((v - 0.2).abs() < 1e-15);
        }
        let s: f64 = tape.values(y).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gumbel_softmax_low_temperature_concentrates() {
        let mut tape = Tape::new(Dtype::F64);
        let z = tape.leaf(Tensor::new(vec![3], vec![0.1, 0.5, 0.2]));
        let noise = tape.constant(Tensor::new(vec![3], vec![0.05, -0.1, 0.3]));
        // argmax(z + g) = index 2 (0.15, 0.4, 0.5)
        let y = tape.gumbel_softmax(z, 1e-4, noise).unwrap();
        let v = tape.values(y);
        assert!(v[2] > 1.0 - 1e-9, "{v:?}");
        assert!(v[0] < 1e-9 && v[1] < 1e-9);
    }

    #[test]
    fn gumbel_softmax_rejects_bad_temperature() {
        let mut tape = Tape::new(Dtype::F64);
        let z = tape.leaf(Tensor::new(vec![2], vec![0.0, 1.0]));
        let noise = tape.constant(Tensor::new(vec![2], vec![0.0, 0.0]));
        assert!(tape.gumbel_softmax(z, 0.0, noise).is_err());
    }

    #[test]
    fn matmul_known_product() {
        let mut tape = Tape::new(Dtype::F64);
        let a = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.values(c), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transpose_roundtrip() {
        let mut tape = Tape::new(Dtype::F64);
        let x = tape.leaf(Tensor::new(vec![2, 3], (0..6).map(|v| v as f64).collect()));
        let t = tape.transpose(x, &[1, 0]).unwrap();
        assert_eq!(tape.shape(t), &[3, 2]);
        assert_eq!(tape.values(t), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let back = tape.transpose(t, &[1, 0]).unwrap();
        assert_eq!(tape.values(back), tape.values(x));
    }

    #[test]
    fn broadcasting_is_suffix_only() {
        let mut tape = Tape::new(Dtype::F64);
        let a = tape.leaf(Tensor::new(vec![2, 3], vec![1.0; 6]));
        let b = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]));
        let y = tape.add(a, b).unwrap();
        assert_eq!(tape.values(y), &[2.0, 3.0, 4.0, 2.0, 3.0, 4.0]);
        let bad = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]));
        assert!(tape.add(a, bad).is_err());
    }

    #[test]
    fn slice_and_concat_invert() {
        let mut tape = Tape::new(Dtype::F64);
        let x = tape.leaf(Tensor::new(vec![2, 4], (0..8).map(|v| v as f64).collect()));
        let a = tape.slice(x, 1, 0, 2).unwrap();
        let b = tape.slice(x, 1, 2, 2).unwrap();
        let y = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.values(y), tape.values(x));
    }
}
