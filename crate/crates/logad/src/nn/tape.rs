//! Reverse-mode autodiff on a flat tape of 2-D arrays.
//!
//! One tape is built per sample, consumed by a single `backward` call, and
//! dropped. Gradients are only materialized for leaves whose parameters are
//! marked trainable; frozen weights cost no backward matmuls.

use super::params::ParamId;
use super::Scalar;
use ndarray::{s, Array2, Axis};
use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

type BackFn<F> = Box<dyn Fn(&Array2<F>, &[bool]) -> Vec<Option<Array2<F>>>>;

struct Node<F: Scalar> {
    value: Arc<Array2<F>>,
    parents: Vec<NodeId>,
    back: Option<BackFn<F>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    param_grads: HashMap<ParamId, Array2<F>>,
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::with_capacity(256),
            param_grads: HashMap::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Array2<F> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.dim()
    }

    /// Gradient for a parameter, accumulated over every leaf that referenced
    /// it. Available after [`Tape::backward`].
    pub fn param_grad(&self, id: ParamId) -> Option<&Array2<F>> {
        self.param_grads.get(&id)
    }

    pub fn take_param_grads(&mut self) -> HashMap<ParamId, Array2<F>> {
        std::mem::take(&mut self.param_grads)
    }

    fn push(
        &mut self,
        value: Array2<F>,
        parents: Vec<NodeId>,
        back: Option<BackFn<F>>,
        param: Option<ParamId>,
        requires_grad: bool,
    ) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: Arc::new(value),
            parents,
            back,
            requires_grad,
            param,
        });
        id
    }

    fn requires(&self, parents: &[NodeId]) -> bool {
        parents.iter().any(|p| self.nodes[p.0].requires_grad)
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Array2<F>) -> NodeId {
        self.push(value, vec![], None, None, false)
    }

    /// Parameter leaf. `trainable` decides whether a gradient is produced.
    pub fn param(&mut self, value: Arc<Array2<F>>, id: ParamId, trainable: bool) -> NodeId {
        let node = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            parents: vec![],
            back: None,
            requires_grad: trainable,
            param: Some(id),
        });
        node
    }

    /// c = a · b
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = Arc::clone(&self.nodes[a.0].value);
        let bv = Arc::clone(&self.nodes[b.0].value);
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner dimension mismatch");
        let value = av.dot(&*bv);
        let req = self.requires(&[a, b]);
        let back: BackFn<F> = Box::new(move |g, needs| {
            vec![
                needs[0].then(|| g.dot(&bv.t())),
                needs[1].then(|| av.t().dot(g)),
            ]
        });
        self.push(value, vec![a, b], Some(back), None, req)
    }

    /// c = a · bᵀ
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = Arc::clone(&self.nodes[a.0].value);
        let bv = Arc::clone(&self.nodes[b.0].value);
        assert_eq!(av.ncols(), bv.ncols(), "matmul_nt inner dimension mismatch");
        let value = av.dot(&bv.t());
        let req = self.requires(&[a, b]);
        let back: BackFn<F> = Box::new(move |g, needs| {
            vec![
                needs[0].then(|| g.dot(&*bv)),
                needs[1].then(|| g.t().dot(&*av)),
            ]
        });
        self.push(value, vec![a, b], Some(back), None, req)
    }

    /// c = a + b (same shape)
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.dim(), bv.dim(), "add shape mismatch");
        let value = &**av + &**bv;
        let req = self.requires(&[a, b]);
        let back: BackFn<F> = Box::new(move |g, needs| {
            vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| g.clone()),
            ]
        });
        self.push(value, vec![a, b], Some(back), None, req)
    }

    /// c = x + row (row is 1×d, broadcast over rows of x)
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let rv = &self.nodes[row.0].value;
        assert_eq!(rv.nrows(), 1, "add_row expects a 1×d row");
        assert_eq!(xv.ncols(), rv.ncols(), "add_row width mismatch");
        let value = &**xv + &**rv;
        let req = self.requires(&[x, row]);
        let back: BackFn<F> = Box::new(move |g, needs| {
            vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| g.sum_axis(Axis(0)).insert_axis(Axis(0))),
            ]
        });
        self.push(value, vec![x, row], Some(back), None, req)
    }

    /// c = s · x
    pub fn scale(&mut self, x: NodeId, factor: F) -> NodeId {
        let value = self.nodes[x.0].value.mapv(|v| v * factor);
        let req = self.requires(&[x]);
        let back: BackFn<F> =
            Box::new(move |g, needs| vec![needs[0].then(|| g.mapv(|v| v * factor))]);
        self.push(value, vec![x], Some(back), None, req)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.mapv(|v| v.tanh());
        let yv = Arc::new(value.clone());
        let req = self.requires(&[x]);
        let back: BackFn<F> = Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let one = F::one();
                let mut dx = g.clone();
                dx.zip_mut_with(&yv, |d, y| *d = *d * (one - *y * *y));
                dx
            })]
        });
        self.push(value, vec![x], Some(back), None, req)
    }

    /// Smooth GELU (tanh approximation).
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let xv = Arc::clone(&self.nodes[x.0].value);
        let half = F::from_f64(0.5);
        let one = F::one();
        let k = F::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
        let c = F::from_f64(0.044715);
        let value = xv.mapv(|v| {
            let u = k * (v + c * v * v * v);
            half * v * (one + u.tanh())
        });
        let req = self.requires(&[x]);
        let back: BackFn<F> = Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let three = F::from_f64(3.0);
                let mut dx = g.clone();
                dx.zip_mut_with(&xv, |d, &v| {
                    let u = k * (v + c * v * v * v);
                    let t = u.tanh();
                    let sech2 = one - t * t;
                    let du = k * (one + three * c * v * v);
                    *d = *d * (half * (one + t) + half * v * sech2 * du);
                });
                dx
            })]
        });
        self.push(value, vec![x], Some(back), None, req)
    }

    /// Row-wise softmax. Callers add any mask beforehand.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let mut value = Array2::<F>::zeros(xv.dim());
        for (mut out, row) in value.axis_iter_mut(Axis(0)).zip(xv.axis_iter(Axis(0))) {
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut denom = F::zero();
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                let e = (v - max).exp();
                *o = e;
                denom = denom + e;
            }
            out.mapv_inplace(|v| v / denom);
        }
        let yv = Arc::new(value.clone());
        let req = self.requires(&[x]);
        let back: BackFn<F> = Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let mut dx = g * &*yv;
                let dot = dx.sum_axis(Axis(1)).insert_axis(Axis(1));
                dx = dx - &(&dot * &*yv);
                dx
            })]
        });
        self.push(value, vec![x], Some(back), None, req)
    }

    /// Row-wise layer normalization with learned gain and bias (both 1×d).
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: F) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let gv = Arc::clone(&self.nodes[gain.0].value);
        let (rows, d) = xv.dim();
        assert_eq!(gv.dim(), (1, d), "layer_norm gain shape");
        let dn = F::from_f64(d as f64);
        let mut normed = Array2::<F>::zeros((rows, d));
        let mut inv_std = Vec::with_capacity(rows);
        for (i, row) in xv.axis_iter(Axis(0)).enumerate() {
            let mean = row.iter().cloned().sum::<F>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
            let istd = F::one() / (var + eps).sqrt();
            inv_std.push(istd);
            for (j, &v) in row.iter().enumerate() {
                normed[[i, j]] = (v - mean) * istd;
            }
        }
        let bv = &self.nodes[bias.0].value;
        let value = &normed * &*gv + &**bv;
        let normed = Arc::new(normed);
        let req = self.requires(&[x, gain, bias]);
        let back: BackFn<F> = Box::new(move |g, needs| {
            let dxhat = g * &*gv; // rows×d
            let dx = needs[0].then(|| {
                let mut dx = Array2::<F>::zeros(dxhat.dim());
                for i in 0..dxhat.nrows() {
                    let drow = dxhat.row(i);
                    let nrow = normed.row(i);
                    let mean_d = drow.iter().cloned().sum::<F>() / dn;
                    let mean_dn = drow
                        .iter()
                        .zip(nrow.iter())
                        .map(|(&a, &b)| a * b)
                        .sum::<F>()
                        / dn;
                    for j in 0..drow.len() {
                        dx[[i, j]] = inv_std[i] * (drow[j] - mean_d - nrow[j] * mean_dn);
                    }
                }
                dx
            });
            let dgain = needs[1].then(|| {
                (g * &*normed).sum_axis(Axis(0)).insert_axis(Axis(0))
            });
            let dbias = needs[2].then(|| g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            vec![dx, dgain, dbias]
        });
        self.push(value, vec![x, gain, bias], Some(back), None, req)
    }

    /// Gather rows of an embedding table.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let tv = &self.nodes[table.0].value;
        let (vocab, d) = tv.dim();
        let mut value = Array2::<F>::zeros((ids.len(), d));
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < vocab, "token id {} out of range {}", id, vocab);
            value.row_mut(i).assign(&tv.row(id));
        }
        let ids: Vec<usize> = ids.to_vec();
        let req = self.requires(&[table]);
        let back: BackFn<F> = Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let mut dt = Array2::<F>::zeros((vocab, d));
                for (i, &id) in ids.iter().enumerate() {
                    let mut row = dt.row_mut(id);
                    row += &g.row(i);
                }
                dt
            })]
        });
        self.push(value, vec![table], Some(back), None, req)
    }

    /// Stack inputs vertically.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.nodes[parts[0].0].value.ncols();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.nrows()).sum();
        let mut value = Array2::<F>::zeros((total, cols));
        let mut offsets = Vec::with_capacity(parts.len());
        let mut at = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.ncols(), cols, "concat_rows width mismatch");
            value.slice_mut(s![at..at + v.nrows(), ..]).assign(v);
            offsets.push((at, v.nrows()));
            at += v.nrows();
        }
        let req = self.requires(parts);
        let back: BackFn<F> = Box::new(move |g, needs| {
            offsets
                .iter()
                .zip(needs)
                .map(|(&(at, n), need)| need.then(|| g.slice(s![at..at + n, ..]).to_owned()))
                .collect()
        });
        self.push(value, parts.to_vec(), Some(back), None, req)
    }

    /// Stack inputs horizontally.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0].0].value.nrows();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.ncols()).sum();
        let mut value = Array2::<F>::zeros((rows, total));
        let mut offsets = Vec::with_capacity(parts.len());
        let mut at = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.nrows(), rows, "concat_cols height mismatch");
            value.slice_mut(s![.., at..at + v.ncols()]).assign(v);
            offsets.push((at, v.ncols()));
            at += v.ncols();
        }
        let req = self.requires(parts);
        let back: BackFn<F> = Box::new(move |g, needs| {
            offsets
                .iter()
                .zip(needs)
                .map(|(&(at, n), need)| need.then(|| g.slice(s![.., at..at + n]).to_owned()))
                .collect()
        });
        self.push(value, parts.to_vec(), Some(back), None, req)
    }

    pub fn slice_rows(&mut self, x: NodeId, range: Range<usize>) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = xv.dim();
        assert!(range.end <= rows, "slice_rows out of range");
        let value = xv.slice(s![range.clone(), ..]).to_owned();
        let req = self.requires(&[x]);
        let back: BackFn<F> = Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let mut dx = Array2::<F>::zeros((rows, cols));
                dx.slice_mut(s![range.clone(), ..]).assign(g);
                dx
            })]
        });
        self.push(value, vec![x], Some(back), None, req)
    }

    pub fn slice_cols(&mut self, x: NodeId, range: Range<usize>) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = xv.dim();
        assert!(range.end <= cols, "slice_cols out of range");
        let value = xv.slice(s![.., range.clone()]).to_owned();
        let req = self.requires(&[x]);
        let back: BackFn<F> = Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let mut dx = Array2::<F>::zeros((rows, cols));
                dx.slice_mut(s![.., range.clone()]).assign(g);
                dx
            })]
        });
        self.push(value, vec![x], Some(back), None, req)
    }

    /// Mean token-level cross-entropy of `logits` (T×V) against `targets`
    /// (length T). Returns a 1×1 node.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let lv = &self.nodes[logits.0].value;
        let (rows, vocab) = lv.dim();
        assert_eq!(rows, targets.len(), "cross_entropy target length mismatch");
        assert!(rows > 0, "cross_entropy on empty logits");
        let mut probs = Array2::<F>::zeros((rows, vocab));
        let mut loss = F::zero();
        let tn = F::from_f64(rows as f64);
        for (i, row) in lv.axis_iter(Axis(0)).enumerate() {
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut denom = F::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[[i, j]] = e;
                denom = denom + e;
            }
            let lse = denom.ln() + max;
            for j in 0..vocab {
                probs[[i, j]] = probs[[i, j]] / denom;
            }
            assert!(targets[i] < vocab, "target id out of vocabulary");
            loss = loss + (lse - lv[[i, targets[i]]]);
        }
        loss = loss / tn;
        let probs = Arc::new(probs);
        let targets: Vec<usize> = targets.to_vec();
        let req = self.requires(&[logits]);
        let back: BackFn<F> = Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let scale = g[[0, 0]] / tn;
                let mut dl = (*probs).clone();
                for (i, &t) in targets.iter().enumerate() {
                    dl[[i, t]] = dl[[i, t]] - F::one();
                }
                dl.mapv_inplace(|v| v * scale);
                dl
            })]
        });
        let value = Array2::from_elem((1, 1), loss);
        self.push(value, vec![logits], Some(back), None, req)
    }

    /// Run reverse-mode accumulation from a scalar (1×1) node. Parameter
    /// gradients are collected per [`ParamId`], summed over repeated leaves.
    pub fn backward(&mut self, root: NodeId) {
        assert_eq!(self.shape(root), (1, 1), "backward expects a scalar node");
        let mut grads: Vec<Option<Array2<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::from_elem((1, 1), F::one()));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Some(pid) = self.nodes[idx].param {
                match self.param_grads.get_mut(&pid) {
                    Some(acc) => *acc += &g,
                    None => {
                        self.param_grads.insert(pid, g);
                    }
                }
                continue;
            }
            let Some(back) = self.nodes[idx].back.as_ref() else { continue };
            let parents = self.nodes[idx].parents.clone();
            let needs: Vec<bool> = parents
                .iter()
                .map(|p| self.nodes[p.0].requires_grad)
                .collect();
            let contribs = back(&g, &needs);
            debug_assert_eq!(contribs.len(), parents.len());
            for (p, contrib) in parents.iter().zip(contribs) {
                if let Some(c) = contrib {
                    match grads[p.0].as_mut() {
                        Some(acc) => *acc += &c,
                        None => grads[p.0] = Some(c),
                    }
                }
            }
        }
    }

    /// Loss value convenience for a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> F {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{ParamGroup, ParamStore};
    use ndarray::arr2;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences against analytic gradients for a scalar
    /// function of one parameter matrix.
    fn gradcheck<B>(build: B, rows: usize, cols: usize, seed: u64)
    where
        B: Fn(&mut Tape<f64>, NodeId) -> NodeId,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0));
        let mut store = ParamStore::<f64>::new();
        let pid = store.register("x", ParamGroup::Projector, base.clone(), true);

        let mut tape = Tape::new();
        let leaf = tape.param(store.shared(pid), pid, true);
        let loss = build(&mut tape, leaf);
        tape.backward(loss);
        let analytic = tape.param_grad(pid).expect("missing gradient").clone();

        let eps = 1e-5;
        for i in 0..rows {
            for j in 0..cols {
                let eval = |delta: f64| {
                    let mut v = base.clone();
                    v[[i, j]] += delta;
                    let mut t = Tape::new();
                    let leaf = t.param(Arc::new(v), pid, false);
                    let loss = build(&mut t, leaf);
                    t.scalar(loss)
                };
                let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
                let a = analytic[[i, j]];
                let denom = fd.abs().max(a.abs()).max(1e-8);
                assert!(
                    (fd - a).abs() / denom < 1e-5,
                    "grad mismatch at ({i},{j}): fd={fd} analytic={a}"
                );
            }
        }
    }

    #[test]
    fn matmul_grads() {
        gradcheck(
            |t, x| {
                let w = t.constant(arr2(&[[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]]));
                let y = t.matmul(x, w);
                let y = t.tanh(y);
                sum_to_scalar(t, y)
            },
            3,
            2,
            1,
        );
    }

    #[test]
    fn matmul_nt_grads() {
        gradcheck(
            |t, x| {
                let w = t.constant(arr2(&[[0.5, -1.0], [0.2, 0.8], [1.1, -0.3]]));
                let y = t.matmul_nt(x, w); // x (2×2) · wᵀ
                sum_to_scalar(t, y)
            },
            2,
            2,
            2,
        );
    }

    #[test]
    fn softmax_and_ce_grads() {
        gradcheck(
            |t, x| {
                let s = t.softmax_rows(x);
                let w = t.constant(Array2::from_shape_fn((4, 3), |(i, j)| {
                    ((i * 5 + j * 3 + 1) as f64 * 2.39).sin()
                }));
                let logits = t.matmul(s, w);
                t.cross_entropy_mean(logits, &[2, 0])
            },
            2,
            4,
            3,
        );
    }

    #[test]
    fn layer_norm_grads() {
        gradcheck(
            |t, x| {
                let gain = t.constant(arr2(&[[1.2, 0.8, 1.0, 0.5]]));
                let bias = t.constant(arr2(&[[0.1, -0.1, 0.0, 0.2]]));
                let y = t.layer_norm(x, gain, bias, 1e-5);
                sum_to_scalar(t, y)
            },
            3,
            4,
            4,
        );
    }

    #[test]
    fn layer_norm_gain_bias_grads() {
        gradcheck(
            |t, g| {
                let x = t.constant(Array2::from_shape_fn((3, 4), |(i, j)| {
                    (i as f64) * 0.7 - (j as f64) * 0.4 + 0.3
                }));
                let bias = t.constant(arr2(&[[0.1, -0.1, 0.0, 0.2]]));
                let y = t.layer_norm(x, g, bias, 1e-5);
                let y = t.tanh(y);
                sum_to_scalar(t, y)
            },
            1,
            4,
            5,
        );
    }

    #[test]
    fn gelu_slice_concat_grads() {
        gradcheck(
            |t, x| {
                let a = t.slice_rows(x, 0..2);
                let b = t.slice_cols(x, 1..3);
                let b = t.slice_rows(b, 0..2);
                let cat = t.concat_cols(&[a, b]);
                let g = t.gelu(cat);
                sum_to_scalar(t, g)
            },
            3,
            3,
            6,
        );
    }

    #[test]
    fn embedding_grads() {
        gradcheck(
            |t, table| {
                let e = t.embedding(table, &[1, 0, 1, 2]);
                let w = t.constant(Array2::from_shape_fn((3, 2), |(i, j)| {
                    0.5 - 0.3 * (i as f64) + 0.2 * (j as f64)
                }));
                let y = t.matmul(e, w);
                let y = t.gelu(y);
                sum_to_scalar(t, y)
            },
            4,
            3,
            7,
        );
    }

    #[test]
    fn add_row_and_scale_grads() {
        gradcheck(
            |t, x| {
                let row = t.constant(arr2(&[[0.2, -0.4, 0.6]]));
                let y = t.add_row(x, row);
                let y = t.scale(y, 1.7);
                let y = t.tanh(y);
                sum_to_scalar(t, y)
            },
            2,
            3,
            8,
        );
    }

    #[test]
    fn repeated_leaf_accumulates() {
        let mut store = ParamStore::<f64>::new();
        let pid = store.register("w", ParamGroup::Projector, arr2(&[[2.0, 3.0]]), true);
        let mut t = Tape::new();
        let a = t.param(store.shared(pid), pid, true);
        let b = t.param(store.shared(pid), pid, true);
        let s = t.add(a, b);
        let one = t.constant(arr2(&[[1.0], [1.0]]));
        let loss = t.matmul(s, one);
        t.backward(loss);
        let g = t.param_grad(pid).unwrap();
        assert_eq!(g, &arr2(&[[2.0, 2.0]]));
    }

    #[test]
    fn frozen_leaf_gets_no_grad() {
        let mut store = ParamStore::<f64>::new();
        let pid = store.register("w", ParamGroup::DecoderBase, arr2(&[[2.0, 3.0]]), true);
        let mut t = Tape::new();
        let leaf = t.param(store.shared(pid), pid, false);
        let one = t.constant(arr2(&[[1.0], [1.0]]));
        let loss = t.matmul(leaf, one);
        t.backward(loss);
        assert!(t.param_grad(pid).is_none());
    }

    fn sum_to_scalar(t: &mut Tape<f64>, x: NodeId) -> NodeId {
        let (r, c) = t.shape(x);
        let ones_r = t.constant(Array2::from_elem((1, r), 1.0));
        let ones_c = t.constant(Array2::from_elem((c, 1), 1.0));
        let rowsum = t.matmul(ones_r, x);
        t.matmul(rowsum, ones_c)
    }
}
