use super::conv::{col2im_add, gemm, im2col, ConvGeom, Padding};
use super::norm::{self, Groups, NormMode};
use super::{Result, Tensor, TensorError, PROB_CLAMP};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Whether a graph is built for training or for evaluation. No op in this
/// engine changes behaviour between the two.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Sigmoid(Var),
    Reshape(Var),
    Reverse(Var, f64),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Normalize {
        x: Var,
        groups: Groups,
        inv_std: Vec<f64>,
    },
    ConcatChannels(Var, Var),
    Tile {
        v: Var,
        spatial: usize,
    },
    RepeatBatch(Var),
    SliceBatch {
        x: Var,
        start: usize,
    },
    ConcatBatch(Vec<Var>),
    Bce {
        pred: Var,
        labels: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Tape of executed operations. Nodes are appended in execution order, so
/// node ids are already a topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    mode: Mode,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward pass. `None` before any backward or for
    /// nodes that do not require gradients; zeros for unreachable leaves.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn backward_done(&self) -> bool {
        self.backward_done
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                dim: format!("operand shapes {sa:?} vs {sb:?}"),
                expected: sa.iter().product(),
                found: sb.iter().product(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let values = va.values().iter().zip(vb.values()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), values)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let values = va.values().iter().zip(vb.values()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(va.shape().to_vec(), values)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let va = self.value(a);
        let t = Tensor::from_fn(va.shape(), |i| va.values()[i] * factor);
        let rg = self.rg(a);
        self.push(t, rg, Op::Scale(a, factor))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).values().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.values().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), rg, Op::Mean(a))
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(TensorError::NonScalarLoss(self.shape(v).to_vec()));
            }
            let scaled = if w == 1.0 { v } else { self.scale(v, w) };
            acc = Some(match acc {
                None => scaled,
                Some(prev) => self.add(prev, scaled)?,
            });
        }
        acc.ok_or_else(|| TensorError::Invalid("weighted_sum of zero terms".into()))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let t = Tensor::from_fn(va.shape(), |i| va.values()[i].max(0.0));
        let rg = self.rg(a);
        self.push(t, rg, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let t = Tensor::from_fn(va.shape(), |i| sigmoid(va.values()[i]));
        let rg = self.rg(a);
        self.push(t, rg, Op::Sigmoid(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, rg, Op::Reshape(a)))
    }

    /// Collapse every axis after the first.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let rest: usize = s[1..].iter().product();
        let n = s[0];
        self.reshape(a, &[n, rest])
    }

    /// Identity on the forward pass; multiplies the upstream gradient by
    /// `-scale` on the backward pass.
    pub fn gradient_reversal(&mut self, a: Var, scale: f64) -> Var {
        let t = self.value(a).clone();
        let rg = self.rg(a);
        self.push(t, rg, Op::Reverse(a, scale))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: Padding) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(kernel), self.shape(bias), stride, padding)?;
        let cols = im2col(&geom, self.value(input).values());
        let (rows, patch, f) = (geom.rows(), geom.patch(), geom.filters);
        let mut out = vec![0.0; rows * f];
        gemm(
            rows,
            patch,
            f,
            &cols,
            false,
            self.value(kernel).values(),
            false,
            0.0,
            &mut out,
        );
        let b = self.value(bias).values();
        for row in out.chunks_exact_mut(f) {
            for (o, bb) in row.iter_mut().zip(b) {
                *o += bb;
            }
        }
        let t = Tensor::new(geom.output_shape(), out)?;
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        let cols = if self.rg(kernel) { cols } else { Vec::new() };
        Ok(self.push(
            t,
            rg,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
        ))
    }

    /// Fully connected layer: `x [N, in] · w [in, out] + b [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 {
            return Err(TensorError::RankMismatch {
                op: "dense input",
                expected: 2,
                found: sx.len(),
            });
        }
        if sw.len() != 2 || sw[0] != sx[1] {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                dim: "input features (weight axis 0 vs input axis 1)".into(),
                expected: sw.first().copied().unwrap_or(0),
                found: sx[1],
            });
        }
        if sb != [sw[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                dim: "bias length (output features)".into(),
                expected: sw[1],
                found: sb.iter().product(),
            });
        }
        let (n, k, m) = (sx[0], sx[1], sw[1]);
        let mut out = vec![0.0; n * m];
        gemm(
            n,
            k,
            m,
            self.value(x).values(),
            false,
            self.value(w).values(),
            false,
            0.0,
            &mut out,
        );
        let bv = self.value(b).values();
        for row in out.chunks_exact_mut(m) {
            for (o, bb) in row.iter_mut().zip(bv) {
                *o += bb;
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(t, rg, Op::Dense { x, w, b }))
    }

    pub fn normalize(&mut self, x: Var, mode: NormMode, epsilon: f64) -> Result<Var> {
        if !(epsilon > 0.0) {
            return Err(TensorError::InvalidEpsilon(epsilon));
        }
        let groups = Groups::new(self.shape(x), mode)?;
        let (out, inv_std) = norm::forward(self.value(x).values(), groups, epsilon);
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::Normalize { x, groups, inv_std }))
    }

    /// Concatenate along the last axis; all leading extents must agree.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() {
            return Err(TensorError::RankMismatch {
                op: "concat_channels",
                expected: sa.len(),
                found: sb.len(),
            });
        }
        let r = sa.len();
        for axis in 0..r - 1 {
            if sa[axis] != sb[axis] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_channels",
                    dim: format!("axis {axis}"),
                    expected: sa[axis],
                    found: sb[axis],
                });
            }
        }
        let (ca, cb) = (sa[r - 1], sb[r - 1]);
        let (va, vb) = (self.value(a).values(), self.value(b).values());
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for (ra, rb) in va.chunks_exact(ca).zip(vb.chunks_exact(cb)) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        let mut shape = sa;
        shape[r - 1] = ca + cb;
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::ConcatChannels(a, b)))
    }

    /// Broadcast a `[N, C]` vector over a spatial grid: `[N, height, width, C]`.
    pub fn tile(&mut self, v: Var, height: usize, width: usize) -> Result<Var> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(TensorError::RankMismatch {
                op: "tile",
                expected: 2,
                found: s.len(),
            });
        }
        let (n, c) = (s[0], s[1]);
        let spatial = height * width;
        let src = self.value(v).values();
        let mut out = Vec::with_capacity(n * spatial * c);
        for row in src.chunks_exact(c) {
            for _ in 0..spatial {
                out.extend_from_slice(row);
            }
        }
        let t = Tensor::new(vec![n, height, width, c], out)?;
        let rg = self.rg(v);
        Ok(self.push(t, rg, Op::Tile { v, spatial }))
    }

    /// Repeat a batch-of-one tensor `n` times along the batch axis.
    pub fn repeat_batch(&mut self, x: Var, n: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.first() != Some(&1) {
            return Err(TensorError::ShapeMismatch {
                op: "repeat_batch",
                dim: "batch".into(),
                expected: 1,
                found: s.first().copied().unwrap_or(0),
            });
        }
        let src = self.value(x).values();
        let mut out = Vec::with_capacity(src.len() * n);
        for _ in 0..n {
            out.extend_from_slice(src);
        }
        let mut shape = s;
        shape[0] = n;
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::RepeatBatch(x)))
    }

    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if start + len > s[0] || len == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "slice_batch",
                dim: "batch".into(),
                expected: s[0],
                found: start + len,
            });
        }
        let per: usize = s[1..].iter().product();
        let values = self.value(x).values()[start * per..(start + len) * per].to_vec();
        let mut shape = s;
        shape[0] = len;
        let t = Tensor::new(shape, values)?;
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::SliceBatch { x, start }))
    }

    pub fn concat_batch(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let t = Tensor::concat_batch(&tensors)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(t, rg, Op::ConcatBatch(parts.to_vec())))
    }

    /// Mean binary cross-entropy `-[d·ln p + (1-d)·ln(1-p)]` with `p`
    /// clamped to `[1e-7, 1-1e-7]`.
    pub fn binary_cross_entropy(&mut self, pred: Var, labels: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "binary_cross_entropy",
                dim: "batch".into(),
                expected: p.len(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.values().iter().find(|&&d| d != 0.0 && d != 1.0) {
            return Err(TensorError::InvalidLabel(bad));
        }
        let loss = p
            .values()
            .iter()
            .zip(labels.values())
            .map(|(&p, &d)| {
                let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(d * pc.ln() + (1.0 - d) * (1.0 - pc).ln())
            })
            .sum::<f64>()
            / p.len() as f64;
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::Bce {
                pred,
                labels: labels.values().to_vec(),
            },
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`. Afterwards every node that
    /// requires a gradient holds one (zeros where `loss` does not depend on it).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.rg(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            self.backward_node(id, &dy, &mut grads);
            grads[id] = Some(dy);
        }
        self.grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                node.requires_grad.then(|| {
                    let shape = node.value.shape().to_vec();
                    match g {
                        Some(values) => Tensor::new(shape, values).expect("gradient shape"),
                        None => Tensor::zeros(&shape),
                    }
                })
            })
            .collect();
        self.backward_done = true;
        Ok(())
    }

    fn backward_node(&self, id: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(g) = self.slot(grads, *v) {
                        add_into(g, dy);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).values().to_vec(), self.value(*b).values().to_vec());
                if let Some(g) = self.slot(grads, *a) {
                    for ((g, d), y) in g.iter_mut().zip(dy).zip(&vb) {
                        *g += d * y;
                    }
                }
                if let Some(g) = self.slot(grads, *b) {
                    for ((g, d), x) in g.iter_mut().zip(dy).zip(&va) {
                        *g += d * x;
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(g) = self.slot(grads, *a) {
                    for (g, d) in g.iter_mut().zip(dy) {
                        *g += d * f;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(g) = self.slot(grads, *a) {
                    g.iter_mut().for_each(|g| *g += dy[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(g) = self.slot(grads, *a) {
                    let s = dy[0] / g.len() as f64;
                    g.iter_mut().for_each(|g| *g += s);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).values();
                if let Some(g) = self.slot(grads, *a) {
                    for ((g, d), x) in g.iter_mut().zip(dy).zip(x) {
                        if *x > 0.0 {
                            *g += d;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.values();
                if let Some(g) = self.slot(grads, *a) {
                    for ((g, d), y) in g.iter_mut().zip(dy).zip(y) {
                        *g += d * y * (1.0 - y);
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(g) = self.slot(grads, *a) {
                    add_into(g, dy);
                }
            }
            Op::Reverse(a, scale) => {
                if let Some(g) = self.slot(grads, *a) {
                    for (g, d) in g.iter_mut().zip(dy) {
                        *g += -scale * d;
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let (rows, patch, f) = (geom.rows(), geom.patch(), geom.filters);
                if let Some(g) = self.slot(grads, *kernel) {
                    gemm(patch, rows, f, cols, true, dy, false, 1.0, g);
                }
                if let Some(g) = self.slot(grads, *bias) {
                    for row in dy.chunks_exact(f) {
                        add_into(g, row);
                    }
                }
                if self.rg(*input) {
                    let mut dcols = vec![0.0; rows * patch];
                    gemm(
                        rows,
                        f,
                        patch,
                        dy,
                        false,
                        self.value(*kernel).values(),
                        true,
                        0.0,
                        &mut dcols,
                    );
                    let g = self.slot(grads, *input).expect("input requires grad");
                    col2im_add(geom, &dcols, g);
                }
            }
            Op::Dense { x, w, b } => {
                let sx = self.shape(*x);
                let (n, k) = (sx[0], sx[1]);
                let m = self.shape(*w)[1];
                if let Some(g) = self.slot(grads, *w) {
                    gemm(k, n, m, self.value(*x).values(), true, dy, false, 1.0, g);
                }
                if let Some(g) = self.slot(grads, *b) {
                    for row in dy.chunks_exact(m) {
                        add_into(g, row);
                    }
                }
                if let Some(g) = self.slot(grads, *x) {
                    gemm(n, m, k, dy, false, self.value(*w).values(), true, 1.0, g);
                }
            }
            Op::Normalize { x, groups, inv_std } => {
                let xhat = node.value.values();
                if let Some(g) = self.slot(grads, *x) {
                    norm::backward(xhat, dy, inv_std, *groups, g);
                }
            }
            Op::ConcatChannels(a, b) => {
                let ca = *self.shape(*a).last().expect("rank ≥ 1");
                let cb = *self.shape(*b).last().expect("rank ≥ 1");
                let width = ca + cb;
                if let Some(g) = self.slot(grads, *a) {
                    for (gr, dr) in g.chunks_exact_mut(ca).zip(dy.chunks_exact(width)) {
                        add_into(gr, &dr[..ca]);
                    }
                }
                if let Some(g) = self.slot(grads, *b) {
                    for (gr, dr) in g.chunks_exact_mut(cb).zip(dy.chunks_exact(width)) {
                        add_into(gr, &dr[ca..]);
                    }
                }
            }
            Op::Tile { v, spatial } => {
                let c = self.shape(*v)[1];
                if let Some(g) = self.slot(grads, *v) {
                    for (gr, block) in g.chunks_exact_mut(c).zip(dy.chunks_exact(c * spatial)) {
                        for cell in block.chunks_exact(c) {
                            add_into(gr, cell);
                        }
                    }
                }
            }
            Op::RepeatBatch(x) => {
                if let Some(g) = self.slot(grads, *x) {
                    let per = g.len();
                    for block in dy.chunks_exact(per) {
                        add_into(g, block);
                    }
                }
            }
            Op::SliceBatch { x, start } => {
                let per: usize = self.shape(*x)[1..].iter().product();
                if let Some(g) = self.slot(grads, *x) {
                    add_into(&mut g[start * per..start * per + dy.len()], dy);
                }
            }
            Op::ConcatBatch(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if let Some(g) = self.slot(grads, *p) {
                        add_into(g, &dy[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::Bce { pred, labels } => {
                let p = self.value(*pred).values();
                let n = p.len() as f64;
                if let Some(g) = self.slot(grads, *pred) {
                    for ((g, &p), &d) in g.iter_mut().zip(p).zip(labels) {
                        // the clamp is flat outside its range
                        if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                            *g += dy[0] * (-d / p + (1.0 - d) / (1.0 - p)) / n;
                        }
                    }
                }
            }
        }
    }

    /// Mutable gradient buffer for `v`, allocated on first use; `None` when
    /// `v` does not require a gradient.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.rg(v) {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_leaf(g: &mut Graph, x: f64) -> Var {
        g.leaf(Tensor::scalar(x), true)
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = scalar_leaf(&mut g, 3.0);
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().values(), &[6.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let x = scalar_leaf(&mut g, 0.0);
        let y = g.sigmoid(x);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().values(), &[0.25]);
    }

    #[test]
    fn reversal_flips_sign_and_keeps_forward() {
        let mut g = Graph::new();
        let x = scalar_leaf(&mut g, 3.0);
        let y = g.gradient_reversal(x, 1.0);
        assert_eq!(g.value(y).values(), &[3.0]);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().values(), &[-1.0]);

        let mut g = Graph::new();
        let x = scalar_leaf(&mut g, 3.0);
        let r = g.gradient_reversal(x, 2.0);
        let y = g.mul(r, r).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().values(), &[-12.0]);
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = scalar_leaf(&mut g, 2.0);
        let unused = g.leaf(Tensor::zeros(&[2, 3]), true);
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(unused).unwrap(), &Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2]), true);
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn bce_values_and_label_validation() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::scalar(0.5), true);
        let l = g.binary_cross_entropy(p, &Tensor::scalar(1.0)).unwrap();
        assert!((g.value(l).values()[0] - 0.693147).abs() < 1e-6);

        let p = g.constant(Tensor::scalar(1.0 - 1e-7));
        let l = g.binary_cross_entropy(p, &Tensor::scalar(1.0)).unwrap();
        assert!(g.value(l).values()[0] < 1e-6);

        let p = g.constant(Tensor::scalar(0.3));
        assert_eq!(
            g.binary_cross_entropy(p, &Tensor::scalar(0.5)),
            Err(TensorError::InvalidLabel(0.5))
        );
    }

    #[test]
    fn identity_conv_returns_input() {
        let mut g = Graph::new();
        let input = Tensor::from_fn(&[1, 4, 4, 1], |i| i as f64 * 0.25 - 1.0);
        let x = g.constant(input.clone());
        let k = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b, 1, Padding::Same).unwrap();
        assert_eq!(g.value(y), &input);
    }

    #[test]
    fn conv_shape_arithmetic() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 64, 64, 3]));
        let k = g.constant(Tensor::zeros(&[5, 5, 3, 16]));
        let b = g.constant(Tensor::zeros(&[16]));
        let y = g.conv2d(x, k, b, 2, Padding::Same).unwrap();
        assert_eq!(g.shape(y), &[1, 32, 32, 16]);
    }

    #[test]
    fn conv_channel_mismatch_names_dimension() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 8, 8, 2]));
        let k = g.constant(Tensor::zeros(&[3, 3, 3, 4]));
        let b = g.constant(Tensor::zeros(&[4]));
        match g.conv2d(x, k, b, 1, Padding::Same) {
            Err(TensorError::ShapeMismatch {
                dim, expected, found, ..
            }) => {
                assert!(dim.contains("input channels"));
                assert_eq!((expected, found), (3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn normalize_rejects_bad_epsilon_and_rank() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        assert_eq!(
            g.normalize(x, NormMode::Layer, 0.0),
            Err(TensorError::InvalidEpsilon(0.0))
        );
        assert!(matches!(
            g.normalize(x, NormMode::Instance, 1e-5),
            Err(TensorError::RankMismatch { .. })
        ));
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 3, 3, 2], 7.5));
        let y = g.normalize(x, NormMode::Instance, 1e-5).unwrap();
        assert!(g.value(y).values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn tile_and_concat_layouts() {
        let mut g = Graph::new();
        let v = g.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let t = g.tile(v, 2, 2).unwrap();
        assert_eq!(g.value(t).values(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let w = g.constant(Tensor::full(&[1, 2, 2, 1], 9.0));
        let c = g.concat_channels(t, w).unwrap();
        assert_eq!(g.shape(c), &[1, 2, 2, 3]);
        assert_eq!(&g.value(c).values()[..3], &[1.0, 2.0, 9.0]);
    }
}
