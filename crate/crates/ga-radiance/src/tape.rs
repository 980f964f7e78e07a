//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! A [`Tape`] records operations as they are evaluated (eager forward), then
//! [`Tape::backward`] walks the record in reverse, accumulating adjoints.
//! Nodes are row-major `rows x cols` matrices of f64; a scalar is `1x1`.
//! Everything the model needs is covered by a fixed op set: elementwise
//! arithmetic, matmul, slicing/concatenation, softmax rows, the RePU
//! activation with a differentiable exponent, and a few structured ops
//! (grouped row means, exclusive row cumsum, per-grade channel mixing) whose
//! adjoints are cheaper written by hand than composed.
//!
//! Gradient correctness is enforced by finite-difference property tests at
//! the pipeline level; the tape itself stays minimal and allocation-heavy
//! rather than clever, which is fine at desk scale.

use crate::ga::{blade_grade, BLADE_COUNT};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    SumAll(NodeId),
    RowSums(NodeId),
    SoftmaxRows(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    Recip(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    Softplus(NodeId),
    Repu { x: NodeId, p: NodeId },
    ConcatCols(NodeId, NodeId),
    ConcatRows(NodeId, NodeId),
    SliceCols { x: NodeId, from: usize },
    SliceRows { x: NodeId, from: usize },
    ScaleRows { x: NodeId, s: NodeId },
    RepeatRows { x: NodeId },
    Reshape(NodeId),
    GroupMeanRows { x: NodeId, group: usize },
    CumsumExclRows(NodeId),
    LayerNormRows { x: NodeId, eps: f64 },
    PerGradeLinear { x: NodeId, w: [NodeId; 5], in_c: usize, out_c: usize },
    BladeMix { x: NodeId, w: NodeId, map: Vec<(usize, usize, f64)>, in_c: usize, out_c: usize },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
    needs_grad: bool,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    /// Smallest |x| seen at any RePU input; finite-difference checks use it
    /// to skip parameters whose perturbation straddles the kink.
    pub min_kink_gap: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            min_kink_gap: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, needs_grad: bool, op: Op) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            grad: Vec::new(),
            needs_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, rows: usize, cols: usize, data: &[f64]) -> NodeId {
        assert_eq!(data.len(), rows * cols, "param shape mismatch");
        self.push(rows, cols, data.to_vec(), true, Op::Leaf)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, rows: usize, cols: usize, data: &[f64]) -> NodeId {
        assert_eq!(data.len(), rows * cols, "constant shape mismatch");
        self.push(rows, cols, data.to_vec(), false, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.push(1, 1, vec![v], false, Op::Leaf)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what}: shape mismatch");
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "add");
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(r, c, v, ng, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "sub");
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(r, c, v, ng, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "mul");
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(r, c, v, ng, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "div");
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x / y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(r, c, v, ng, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| -x).collect();
        let ng = self.ng(a);
        self.push(r, c, v, ng, Op::Neg(a))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x * k).collect();
        let ng = self.ng(a);
        self.push(r, c, v, ng, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x + k).collect();
        let ng = self.ng(a);
        self.push(r, c, v, ng, Op::AddScalar(a))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul: inner dims {k} vs {k2}");
        let mut v = vec![0.0; m * n];
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            for i in 0..m {
                for p in 0..k {
                    let aip = av[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    let out = &mut v[i * n..(i + 1) * n];
                    for (o, bb) in out.iter_mut().zip(brow) {
                        *o += aip * bb;
                    }
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(m, n, v, ng, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut v = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                v[j * m + i] = av[i * n + j];
            }
        }
        let ng = self.ng(a);
        self.push(n, m, v, ng, Op::Transpose(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.iter().sum();
        let ng = self.ng(a);
        self.push(1, 1, vec![s], ng, Op::SumAll(a))
    }

    /// (m,n) -> (m,1) row sums.
    pub fn row_sums(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let v: Vec<f64> = (0..m).map(|i| av[i * n..(i + 1) * n].iter().sum()).collect();
        let ng = self.ng(a);
        self.push(m, 1, v, ng, Op::RowSums(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut v = vec![0.0; m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                v[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                v[i * n + j] /= sum;
            }
        }
        let ng = self.ng(a);
        self.push(m, n, v, ng, Op::SoftmaxRows(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.exp()).collect();
        let ng = self.ng(a);
        self.push(r, c, v, ng, Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.ln()).collect();
        let ng = self.ng(a);
        self.push(r, c, v, ng, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.sqrt()).collect();
        let ng = self.ng(a);
        self.push(r, c, v, ng, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| 1.0 / x).collect();
        let ng = self.ng(a);
        self.push(r, c, v, ng, Op::Recip(a))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.sin()).collect();
        let ng = self.ng(a);
        self.push(r, c, v, ng, Op::Sin(a))
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.cos()).collect();
        let ng = self.ng(a);
        self.push(r, c, v, ng, Op::Cos(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.max(0.0)).collect();
        let ng = self.ng(a);
        self.push(r, c, v, ng, Op::Relu(a))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| gelu(x)).collect();
        let ng = self.ng(a);
        self.push(r, c, v, ng, Op::Gelu(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| softplus(x)).collect();
        let ng = self.ng(a);
        self.push(r, c, v, ng, Op::Softplus(a))
    }

    /// Rectified power unit (max(0,x))^p with a scalar (1x1) exponent node.
    pub fn repu(&mut self, x: NodeId, p: NodeId) -> NodeId {
        assert_eq!(self.shape(p), (1, 1), "repu exponent must be scalar");
        let (r, c) = self.shape(x);
        let pv = self.nodes[p.0].value[0];
        let mut gap = f64::INFINITY;
        let v: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .map(|&t| {
                gap = gap.min(t.abs());
                crate::radiance::repu(t, pv)
            })
            .collect();
        self.min_kink_gap = self.min_kink_gap.min(gap);
        let ng = self.ng(x) || self.ng(p);
        self.push(r, c, v, ng, Op::Repu { x, p })
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, n1) = self.shape(a);
        let (m2, n2) = self.shape(b);
        assert_eq!(m, m2, "concat_cols: row mismatch");
        let mut v = Vec::with_capacity(m * (n1 + n2));
        for i in 0..m {
            v.extend_from_slice(&self.nodes[a.0].value[i * n1..(i + 1) * n1]);
            v.extend_from_slice(&self.nodes[b.0].value[i * n2..(i + 1) * n2]);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(m, n1 + n2, v, ng, Op::ConcatCols(a, b))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m1, n) = self.shape(a);
        let (m2, n2) = self.shape(b);
        assert_eq!(n, n2, "concat_rows: col mismatch");
        let mut v = Vec::with_capacity((m1 + m2) * n);
        v.extend_from_slice(&self.nodes[a.0].value);
        v.extend_from_slice(&self.nodes[b.0].value);
        let ng = self.ng(a) || self.ng(b);
        self.push(m1 + m2, n, v, ng, Op::ConcatRows(a, b))
    }

    pub fn slice_cols(&mut self, x: NodeId, from: usize, to: usize) -> NodeId {
        let (m, n) = self.shape(x);
        assert!(from < to && to <= n, "slice_cols out of range");
        let w = to - from;
        let mut v = Vec::with_capacity(m * w);
        for i in 0..m {
            v.extend_from_slice(&self.nodes[x.0].value[i * n + from..i * n + to]);
        }
        let ng = self.ng(x);
        self.push(m, w, v, ng, Op::SliceCols { x, from })
    }

    pub fn slice_rows(&mut self, x: NodeId, from: usize, to: usize) -> NodeId {
        let (m, n) = self.shape(x);
        assert!(from < to && to <= m, "slice_rows out of range");
        let v = self.nodes[x.0].value[from * n..to * n].to_vec();
        let ng = self.ng(x);
        self.push(to - from, n, v, ng, Op::SliceRows { x, from })
    }

    /// out[i,j] = x[i,j] * s[i], with s of shape (m,1).
    pub fn scale_rows(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let (m, n) = self.shape(x);
        assert_eq!(self.shape(s), (m, 1), "scale_rows: scaler must be (m,1)");
        let sv = &self.nodes[s.0].value;
        let v: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .enumerate()
            .map(|(idx, &t)| t * sv[idx / n])
            .collect();
        let ng = self.ng(x) || self.ng(s);
        self.push(m, n, v, ng, Op::ScaleRows { x, s })
    }

    /// Tile a (1,n) row `times` times.
    pub fn repeat_rows(&mut self, x: NodeId, times: usize) -> NodeId {
        let (m, n) = self.shape(x);
        assert_eq!(m, 1, "repeat_rows expects a single row");
        let mut v = Vec::with_capacity(times * n);
        for _ in 0..times {
            v.extend_from_slice(&self.nodes[x.0].value);
        }
        let ng = self.ng(x);
        self.push(times, n, v, ng, Op::RepeatRows { x })
    }

    /// Reinterpret the row-major buffer under a new shape.
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let (m, n) = self.shape(x);
        assert_eq!(m * n, rows * cols, "reshape: element count mismatch");
        let v = self.nodes[x.0].value.clone();
        let ng = self.ng(x);
        self.push(rows, cols, v, ng, Op::Reshape(x))
    }

    /// Mean over consecutive groups of `group` rows: (m,n) -> (m/group, n).
    pub fn group_mean_rows(&mut self, x: NodeId, group: usize) -> NodeId {
        let (m, n) = self.shape(x);
        assert!(group > 0 && m % group == 0, "group_mean_rows: bad group");
        let out_m = m / group;
        let mut v = vec![0.0; out_m * n];
        let xv = &self.nodes[x.0].value;
        for i in 0..m {
            let o = i / group;
            for j in 0..n {
                v[o * n + j] += xv[i * n + j];
            }
        }
        let inv = 1.0 / group as f64;
        for t in &mut v {
            *t *= inv;
        }
        let ng = self.ng(x);
        self.push(out_m, n, v, ng, Op::GroupMeanRows { x, group })
    }

    /// Exclusive prefix sums along each row.
    pub fn cumsum_excl_rows(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.shape(x);
        let xv = &self.nodes[x.0].value;
        let mut v = vec![0.0; m * n];
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..n {
                v[i * n + j] = acc;
                acc += xv[i * n + j];
            }
        }
        let ng = self.ng(x);
        self.push(m, n, v, ng, Op::CumsumExclRows(x))
    }

    /// Per-row standardisation (x - mean) / sqrt(var + eps), no affine.
    pub fn layer_norm_rows(&mut self, x: NodeId, eps: f64) -> NodeId {
        let (m, n) = self.shape(x);
        let xv = &self.nodes[x.0].value;
        let mut v = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                v[i * n + j] = (row[j] - mean) * inv;
            }
        }
        let ng = self.ng(x);
        self.push(m, n, v, ng, Op::LayerNormRows { x, eps })
    }

    /// Grade-equivariant channel mixing on multivector tokens.
    ///
    /// `x` is (T, in_c*16) with blades fastest; for every blade b of grade g,
    /// out[t, c', b] = sum_c w[g][c', c] x[t, c, b]. The five weight nodes
    /// are (out_c, in_c) matrices, one per grade.
    pub fn per_grade_linear(&mut self, x: NodeId, w: [NodeId; 5], in_c: usize, out_c: usize) -> NodeId {
        let (t_len, width) = self.shape(x);
        assert_eq!(width, in_c * BLADE_COUNT, "per_grade_linear: input width");
        for wg in &w {
            assert_eq!(self.shape(*wg), (out_c, in_c), "per_grade_linear: weight shape");
        }
        let mut v = vec![0.0; t_len * out_c * BLADE_COUNT];
        {
            let xv = &self.nodes[x.0].value;
            for t in 0..t_len {
                for b in 0..BLADE_COUNT {
                    let g = blade_grade(b);
                    let wv = &self.nodes[w[g].0].value;
                    for co in 0..out_c {
                        let mut acc = 0.0;
                        for ci in 0..in_c {
                            acc += wv[co * in_c + ci] * xv[t * width + ci * BLADE_COUNT + b];
                        }
                        v[t * out_c * BLADE_COUNT + co * BLADE_COUNT + b] = acc;
                    }
                }
            }
        }
        let ng = self.ng(x) || w.iter().any(|n| self.ng(*n));
        self.push(t_len, out_c * BLADE_COUNT, v, ng, Op::PerGradeLinear { x, w, in_c, out_c })
    }

    /// Channel mixing composed with a fixed blade map (out_blade, in_blade,
    /// sign): out[t, c', b'] += w[c', c] * sign * x[t, c, b] for each map
    /// entry. Used for the optional e4-multiplication path.
    pub fn blade_mix(
        &mut self,
        x: NodeId,
        w: NodeId,
        map: &[(usize, usize, f64)],
        in_c: usize,
        out_c: usize,
    ) -> NodeId {
        let (t_len, width) = self.shape(x);
        assert_eq!(width, in_c * BLADE_COUNT, "blade_mix: input width");
        assert_eq!(self.shape(w), (out_c, in_c), "blade_mix: weight shape");
        let mut v = vec![0.0; t_len * out_c * BLADE_COUNT];
        {
            let xv = &self.nodes[x.0].value;
            let wv = &self.nodes[w.0].value;
            for t in 0..t_len {
                for &(bo, bi, s) in map {
                    for co in 0..out_c {
                        let mut acc = 0.0;
                        for ci in 0..in_c {
                            acc += wv[co * in_c + ci] * xv[t * width + ci * BLADE_COUNT + bi];
                        }
                        v[t * out_c * BLADE_COUNT + co * BLADE_COUNT + bo] += s * acc;
                    }
                }
            }
        }
        let ng = self.ng(x) || self.ng(w);
        self.push(
            t_len,
            out_c * BLADE_COUNT,
            v,
            ng,
            Op::BladeMix { x, w, map: map.to_vec(), in_c, out_c },
        )
    }

    /// Affine layer y = x W^T + 1 b, with x (m, in), w (out, in), b (1, out).
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let wt = self.transpose(w);
        let xw = self.matmul(x, wt);
        let (m, _) = self.shape(xw);
        let bb = self.repeat_rows(b, m);
        self.add(xw, bb)
    }

    /// Mean of all elements as a scalar node.
    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.shape(x);
        let s = self.sum_all(x);
        self.scale(s, 1.0 / (m * n) as f64)
    }

    // -- backward ----------------------------------------------------------

    /// Backpropagate from a scalar node. Adjoints accumulate into every
    /// node's `grad`; leaves created with [`Tape::param`] hold the result.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        for n in &mut self.nodes {
            n.grad = vec![0.0; n.value.len()];
        }
        self.nodes[loss.0].grad[0] = 1.0;

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    self.accum(a, &g, |gi, _| gi);
                    self.accum(b, &g, |gi, _| gi);
                    self.nodes[idx].grad = g;
                }
                Op::Sub(a, b) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    self.accum(a, &g, |gi, _| gi);
                    self.accum(b, &g, |gi, _| -gi);
                    self.nodes[idx].grad = g;
                }
                Op::Mul(a, b) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let bv = self.nodes[b.0].value.clone();
                    self.accum(a, &g, |gi, i| gi * bv[i]);
                    let av = self.nodes[a.0].value.clone();
                    self.accum(b, &g, |gi, i| gi * av[i]);
                    self.nodes[idx].grad = g;
                }
                Op::Div(a, b) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    self.accum(a, &g, |gi, i| gi / bv[i]);
                    self.accum(b, &g, |gi, i| -gi * av[i] / (bv[i] * bv[i]));
                    self.nodes[idx].grad = g;
                }
                Op::Neg(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    self.accum(a, &g, |gi, _| -gi);
                    self.nodes[idx].grad = g;
                }
                Op::Scale(a, k) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    self.accum(a, &g, |gi, _| gi * k);
                    self.nodes[idx].grad = g;
                }
                Op::AddScalar(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    self.accum(a, &g, |gi, _| gi);
                    self.nodes[idx].grad = g;
                }
                Op::MatMul(a, b) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (m, k) = self.shape(a);
                    let (_, n) = self.shape(b);
                    if self.ng(a) {
                        let bv = self.nodes[b.0].value.clone();
                        let ga = &mut self.nodes[a.0].grad;
                        // dA = G B^T
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[i * n + j] * bv[p * n + j];
                                }
                                ga[i * k + p] += acc;
                            }
                        }
                    }
                    if self.ng(b) {
                        let av = self.nodes[a.0].value.clone();
                        let gb = &mut self.nodes[b.0].grad;
                        // dB = A^T G
                        for p in 0..k {
                            for i in 0..m {
                                let aip = av[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    gb[p * n + j] += aip * g[i * n + j];
                                }
                            }
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::Transpose(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (n, m) = self.shape(NodeId(idx));
                    if self.ng(a) {
                        let ga = &mut self.nodes[a.0].grad;
                        for i in 0..n {
                            for j in 0..m {
                                ga[j * n + i] += g[i * m + j];
                            }
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::SumAll(a) => {
                    let g0 = self.nodes[idx].grad[0];
                    if self.ng(a) {
                        for t in &mut self.nodes[a.0].grad {
                            *t += g0;
                        }
                    }
                }
                Op::RowSums(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (_, n) = self.shape(a);
                    if self.ng(a) {
                        let ga = &mut self.nodes[a.0].grad;
                        for (i, gi) in g.iter().enumerate() {
                            for j in 0..n {
                                ga[i * n + j] += gi;
                            }
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::SoftmaxRows(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (m, n) = self.shape(NodeId(idx));
                    if self.ng(a) {
                        let y = self.nodes[idx].value.clone();
                        let ga = &mut self.nodes[a.0].grad;
                        for i in 0..m {
                            let yr = &y[i * n..(i + 1) * n];
                            let gr = &g[i * n..(i + 1) * n];
                            let dot: f64 = yr.iter().zip(gr).map(|(yy, gg)| yy * gg).sum();
                            for j in 0..n {
                                ga[i * n + j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::Exp(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let y = self.nodes[idx].value.clone();
                    self.accum(a, &g, |gi, i| gi * y[i]);
                    self.nodes[idx].grad = g;
                }
                Op::Ln(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let xv = self.nodes[a.0].value.clone();
                    self.accum(a, &g, |gi, i| gi / xv[i]);
                    self.nodes[idx].grad = g;
                }
                Op::Sqrt(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let y = self.nodes[idx].value.clone();
                    self.accum(a, &g, |gi, i| gi / (2.0 * y[i]));
                    self.nodes[idx].grad = g;
                }
                Op::Recip(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let xv = self.nodes[a.0].value.clone();
                    self.accum(a, &g, |gi, i| -gi / (xv[i] * xv[i]));
                    self.nodes[idx].grad = g;
                }
                Op::Sin(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let xv = self.nodes[a.0].value.clone();
                    self.accum(a, &g, |gi, i| gi * xv[i].cos());
                    self.nodes[idx].grad = g;
                }
                Op::Cos(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let xv = self.nodes[a.0].value.clone();
                    self.accum(a, &g, |gi, i| -gi * xv[i].sin());
                    self.nodes[idx].grad = g;
                }
                Op::Relu(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let xv = self.nodes[a.0].value.clone();
                    self.accum(a, &g, |gi, i| if xv[i] > 0.0 { gi } else { 0.0 });
                    self.nodes[idx].grad = g;
                }
                Op::Gelu(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let xv = self.nodes[a.0].value.clone();
                    self.accum(a, &g, |gi, i| gi * gelu_grad(xv[i]));
                    self.nodes[idx].grad = g;
                }
                Op::Softplus(a) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let xv = self.nodes[a.0].value.clone();
                    self.accum(a, &g, |gi, i| gi * sigmoid(xv[i]));
                    self.nodes[idx].grad = g;
                }
                Op::Repu { x, p } => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let xv = self.nodes[x.0].value.clone();
                    let pv = self.nodes[p.0].value[0];
                    let yv = self.nodes[idx].value.clone();
                    if self.ng(x) {
                        let gx = &mut self.nodes[x.0].grad;
                        for (i, gi) in g.iter().enumerate() {
                            if xv[i] > 0.0 {
                                gx[i] += gi * pv * xv[i].powf(pv - 1.0);
                            }
                        }
                    }
                    if self.ng(p) {
                        let mut acc = 0.0;
                        for (i, gi) in g.iter().enumerate() {
                            if xv[i] > 0.0 {
                                acc += gi * yv[i] * xv[i].ln();
                            }
                        }
                        self.nodes[p.0].grad[0] += acc;
                    }
                    self.nodes[idx].grad = g;
                }
                Op::ConcatCols(a, b) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (m, n1) = self.shape(a);
                    let (_, n2) = self.shape(b);
                    let n = n1 + n2;
                    if self.ng(a) {
                        let ga = &mut self.nodes[a.0].grad;
                        for i in 0..m {
                            for j in 0..n1 {
                                ga[i * n1 + j] += g[i * n + j];
                            }
                        }
                    }
                    if self.ng(b) {
                        let gb = &mut self.nodes[b.0].grad;
                        for i in 0..m {
                            for j in 0..n2 {
                                gb[i * n2 + j] += g[i * n + n1 + j];
                            }
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::ConcatRows(a, b) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (m1, n) = self.shape(a);
                    if self.ng(a) {
                        let ga = &mut self.nodes[a.0].grad;
                        for (t, gi) in g[..m1 * n].iter().enumerate() {
                            ga[t] += gi;
                        }
                    }
                    if self.ng(b) {
                        let gb = &mut self.nodes[b.0].grad;
                        for (t, gi) in g[m1 * n..].iter().enumerate() {
                            gb[t] += gi;
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::SliceCols { x, from } => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (m, w) = self.shape(NodeId(idx));
                    let (_, n) = self.shape(x);
                    if self.ng(x) {
                        let gx = &mut self.nodes[x.0].grad;
                        for i in 0..m {
                            for j in 0..w {
                                gx[i * n + from + j] += g[i * w + j];
                            }
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::SliceRows { x, from } => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (_, n) = self.shape(x);
                    if self.ng(x) {
                        let gx = &mut self.nodes[x.0].grad;
                        for (t, gi) in g.iter().enumerate() {
                            gx[from * n + t] += gi;
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::ScaleRows { x, s } => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (m, n) = self.shape(x);
                    let sv = self.nodes[s.0].value.clone();
                    if self.ng(x) {
                        let gx = &mut self.nodes[x.0].grad;
                        for i in 0..m {
                            for j in 0..n {
                                gx[i * n + j] += g[i * n + j] * sv[i];
                            }
                        }
                    }
                    if self.ng(s) {
                        let xv = self.nodes[x.0].value.clone();
                        let gs = &mut self.nodes[s.0].grad;
                        for i in 0..m {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * xv[i * n + j];
                            }
                            gs[i] += acc;
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::RepeatRows { x } => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (times, n) = self.shape(NodeId(idx));
                    if self.ng(x) {
                        let gx = &mut self.nodes[x.0].grad;
                        for i in 0..times {
                            for j in 0..n {
                                gx[j] += g[i * n + j];
                            }
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::Reshape(x) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    self.accum(x, &g, |gi, _| gi);
                    self.nodes[idx].grad = g;
                }
                Op::GroupMeanRows { x, group } => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (m, n) = self.shape(x);
                    let inv = 1.0 / group as f64;
                    if self.ng(x) {
                        let gx = &mut self.nodes[x.0].grad;
                        for i in 0..m {
                            let o = i / group;
                            for j in 0..n {
                                gx[i * n + j] += g[o * n + j] * inv;
                            }
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::CumsumExclRows(x) => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (m, n) = self.shape(x);
                    if self.ng(x) {
                        let gx = &mut self.nodes[x.0].grad;
                        for i in 0..m {
                            // dL/dx_j = sum_{k > j} g_k
                            let mut acc = 0.0;
                            for j in (0..n).rev() {
                                gx[i * n + j] += acc;
                                acc += g[i * n + j];
                            }
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::LayerNormRows { x, eps } => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (m, n) = self.shape(x);
                    if self.ng(x) {
                        let xv = self.nodes[x.0].value.clone();
                        let y = self.nodes[idx].value.clone();
                        let gx = &mut self.nodes[x.0].grad;
                        for i in 0..m {
                            let row = &xv[i * n..(i + 1) * n];
                            let mean = row.iter().sum::<f64>() / n as f64;
                            let var =
                                row.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n as f64;
                            let inv = 1.0 / (var + eps).sqrt();
                            let gr = &g[i * n..(i + 1) * n];
                            let yr = &y[i * n..(i + 1) * n];
                            let g_mean: f64 = gr.iter().sum::<f64>() / n as f64;
                            let gy_mean: f64 =
                                gr.iter().zip(yr).map(|(gg, yy)| gg * yy).sum::<f64>() / n as f64;
                            for j in 0..n {
                                gx[i * n + j] += inv * (gr[j] - g_mean - yr[j] * gy_mean);
                            }
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::PerGradeLinear { x, w, in_c, out_c } => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (t_len, in_w) = self.shape(x);
                    let out_w = out_c * BLADE_COUNT;
                    if self.ng(x) {
                        let wv: Vec<Vec<f64>> =
                            w.iter().map(|id| self.nodes[id.0].value.clone()).collect();
                        let gx = &mut self.nodes[x.0].grad;
                        for t in 0..t_len {
                            for b in 0..BLADE_COUNT {
                                let gr = blade_grade(b);
                                for ci in 0..in_c {
                                    let mut acc = 0.0;
                                    for co in 0..out_c {
                                        acc += wv[gr][co * in_c + ci] * g[t * out_w + co * BLADE_COUNT + b];
                                    }
                                    gx[t * in_w + ci * BLADE_COUNT + b] += acc;
                                }
                            }
                        }
                    }
                    let xv = self.nodes[x.0].value.clone();
                    for (gidx, wid) in w.iter().enumerate() {
                        if !self.ng(*wid) {
                            continue;
                        }
                        let gw = &mut self.nodes[wid.0].grad;
                        for b in 0..BLADE_COUNT {
                            if blade_grade(b) != gidx {
                                continue;
                            }
                            for t in 0..t_len {
                                for co in 0..out_c {
                                    let go = g[t * out_w + co * BLADE_COUNT + b];
                                    if go == 0.0 {
                                        continue;
                                    }
                                    for ci in 0..in_c {
                                        gw[co * in_c + ci] += go * xv[t * in_w + ci * BLADE_COUNT + b];
                                    }
                                }
                            }
                        }
                    }
                    self.nodes[idx].grad = g;
                }
                Op::BladeMix { x, w, map, in_c, out_c } => {
                    let g = std::mem::take(&mut self.nodes[idx].grad);
                    let (t_len, in_w) = self.shape(x);
                    let out_w = out_c * BLADE_COUNT;
                    if self.ng(x) {
                        let wv = self.nodes[w.0].value.clone();
                        let gx = &mut self.nodes[x.0].grad;
                        for t in 0..t_len {
                            for &(bo, bi, s) in &map {
                                for ci in 0..in_c {
                                    let mut acc = 0.0;
                                    for co in 0..out_c {
                                        acc += wv[co * in_c + ci] * g[t * out_w + co * BLADE_COUNT + bo];
                                    }
                                    gx[t * in_w + ci * BLADE_COUNT + bi] += s * acc;
                                }
                            }
                        }
                    }
                    if self.ng(w) {
                        let xv = self.nodes[x.0].value.clone();
                        let gw = &mut self.nodes[w.0].grad;
                        for t in 0..t_len {
                            for &(bo, bi, s) in &map {
                                for co in 0..out_c {
                                    let go = g[t * out_w + co * BLADE_COUNT + bo];
                                    if go == 0.0 {
                                        continue;
                                    }
                                    for ci in 0..in_c {
                                        gw[co * in_c + ci] += s * go * xv[t * in_w + ci * BLADE_COUNT + bi];
                                    }
                                }
                            }
                        }
                    }
                    self.nodes[idx].grad = g;
                }
            }
        }
    }

    fn accum(&mut self, target: NodeId, g: &[f64], f: impl Fn(f64, usize) -> f64) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        let gt = &mut self.nodes[target.0].grad;
        for (i, &gi) in g.iter().enumerate() {
            gt[i] += f(gi, i);
        }
    }
}

/// tanh-approximation GELU, matching the gradient used in backward.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
