//! Reverse-mode autodiff over dense f64 tensors.
//!
//! A [`Tape`] records one forward computation as a flat list of nodes. Each
//! node stores its value plus a backward closure that, given the gradient of
//! the loss with respect to the node, pushes contributions to its parents.
//! Leaves may be bound to a [`Param`]; `backward` accumulates into
//! `param.grad` for those.
//!
//! Invariants the rest of the crate leans on:
//! * every op has a single fixed evaluation order, so identical inputs give
//!   bit-identical outputs and gradients across runs;
//! * no op mutates an input tensor; values are shared via `Rc`;
//! * `backward` visits nodes in reverse recording order exactly once, so
//!   fan-out accumulates correctly.

use std::cell::RefCell;
use std::rc::Rc;

use super::param::Param;
use super::rng::StreamRng;
use super::tensor::Tensor;

/// Handle to a node on a specific tape. Only valid for the tape that made it.
#[derive(Copy, Clone, Debug)]
pub struct Var(usize);

struct GradSink<'a> {
    grads: &'a mut [Option<Tensor>],
}

impl GradSink<'_> {
    fn add(&mut self, id: usize, contribution: Tensor) {
        match &mut self.grads[id] {
            Some(g) => g.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }
}

type BackwardFn = Box<dyn Fn(&Tensor, &mut GradSink)>;

struct Node {
    value: Rc<Tensor>,
    backward: Option<BackwardFn>,
    param: Option<Param>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, backward: Option<BackwardFn>, param: Option<Param>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            backward,
            param,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    // ---- leaves ----

    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t, None, None)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf bound to a parameter; `backward` accumulates into `param.grad`
    /// unless the parameter opted out of gradients.
    pub fn param(&self, p: &Param) -> Var {
        let value = p.borrow().value.clone();
        let wants_grad = p.borrow().requires_grad;
        self.push(value, None, wants_grad.then(|| Rc::clone(p)))
    }

    // ---- elementwise ----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let out = va.zip_map(&vb, |x, y| x + y);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink.add(a.0, g.clone());
                sink.add(b.0, g.clone());
            })),
            None,
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let out = va.zip_map(&vb, |x, y| x - y);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink.add(a.0, g.clone());
                sink.add(b.0, g.map(|x| -x));
            })),
            None,
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let out = va.zip_map(&vb, |x, y| x * y);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink.add(a.0, g.zip_map(&vb, |gv, y| gv * y));
                sink.add(b.0, g.zip_map(&va, |gv, x| gv * x));
            })),
            None,
        )
    }

    /// y = mul * x + add, elementwise with scalar coefficients.
    pub fn affine(&self, a: Var, mul: f64, add: f64) -> Var {
        let va = self.value(a);
        let out = va.map(|x| mul * x + add);
        self.push(
            out,
            Some(Box::new(move |g, sink| sink.add(a.0, g.map(|gv| gv * mul)))),
            None,
        )
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.affine(a, c, 0.0)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.affine(a, -1.0, 0.0)
    }

    pub fn tanh(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.map(f64::tanh);
        let out_copy = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink.add(a.0, g.zip_map(&out_copy, |gv, y| gv * (1.0 - y * y)));
            })),
            None,
        )
    }

    pub fn exp(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.map(f64::exp);
        let out_copy = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink.add(a.0, g.zip_map(&out_copy, |gv, y| gv * y));
            })),
            None,
        )
    }

    /// Natural log; inputs must be strictly positive.
    pub fn ln(&self, a: Var) -> Var {
        let va = self.value(a);
        debug_assert!(va.data().iter().all(|&x| x > 0.0), "ln of non-positive value");
        let out = va.map(f64::ln);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink.add(a.0, g.zip_map(&va, |gv, x| gv / x));
            })),
            None,
        )
    }

    /// Softplus with sharpness s: y = ln(1 + exp(s x)) / s. Overflow-safe.
    pub fn softplus(&self, a: Var, sharpness: f64) -> Var {
        assert!(sharpness > 0.0, "softplus sharpness must be positive");
        let va = self.value(a);
        let s = sharpness;
        let out = va.map(|x| stable_softplus(s * x) / s);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                // d/dx = sigmoid(s x)
                sink.add(a.0, g.zip_map(&va, |gv, x| gv * sigmoid(s * x)));
            })),
            None,
        )
    }

    /// Smooth GELU (tanh approximation).
    pub fn gelu(&self, a: Var) -> Var {
        const C: f64 = 0.7978845608028654; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let va = self.value(a);
        let out = va.map(|x| {
            let u = C * (x + A * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink.add(
                    a.0,
                    g.zip_map(&va, |gv, x| {
                        let u = C * (x + A * x * x * x);
                        let t = u.tanh();
                        let du = C * (1.0 + 3.0 * A * x * x);
                        gv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    }),
                );
            })),
            None,
        )
    }

    // ---- structural ----

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.matmul(&vb);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink.add(a.0, g.matmul(&vb.transpose()));
                sink.add(b.0, va.transpose().matmul(g));
            })),
            None,
        )
    }

    pub fn transpose(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.transpose();
        self.push(
            out,
            Some(Box::new(move |g, sink| sink.add(a.0, g.transpose()))),
            None,
        )
    }

    /// Adds vector `v` (rank 1, len D) to every row of `m` (L x D).
    pub fn add_row_broadcast(&self, m: Var, v: Var) -> Var {
        let (vm, vv) = (self.value(m), self.value(v));
        assert_eq!(vm.cols(), vv.len(), "add_row_broadcast width mismatch");
        let cols = vm.cols();
        let mut out = (*vm).clone();
        for r in 0..out.rows() {
            for c in 0..cols {
                *out.at_mut(r, c) += vv.data()[c];
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink.add(m.0, g.clone());
                let mut dv = vec![0.0; cols];
                for r in 0..g.rows() {
                    for c in 0..cols {
                        dv[c] += g.at(r, c);
                    }
                }
                sink.add(v.0, Tensor::vector(dv));
            })),
            None,
        )
    }

    /// Stacks `count` copies of a rank-1 vector into a (count x D) matrix.
    pub fn repeat_rows(&self, v: Var, count: usize) -> Var {
        let vv = self.value(v);
        assert_eq!(vv.rank(), 1, "repeat_rows wants a vector");
        let d = vv.len();
        let mut data = Vec::with_capacity(count * d);
        for _ in 0..count {
            data.extend_from_slice(vv.data());
        }
        let out = Tensor::new(vec![count, d], data).expect("repeat_rows shape");
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut dv = vec![0.0; d];
                for r in 0..count {
                    for c in 0..d {
                        dv[c] += g.at(r, c);
                    }
                }
                sink.add(v.0, Tensor::vector(dv));
            })),
            None,
        )
    }

    /// Vertical concatenation; all parts share a column count. Rank-1 parts
    /// count as one row.
    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let values: Vec<Rc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let cols = values[0].cols();
        assert!(
            values.iter().all(|v| v.cols() == cols),
            "concat_rows column mismatch"
        );
        let total_rows: usize = values.iter().map(|v| v.rows()).sum();
        let mut data = Vec::with_capacity(total_rows * cols);
        for v in &values {
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(vec![total_rows, cols], data).expect("concat_rows shape");
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let row_counts: Vec<usize> = values.iter().map(|v| v.rows()).collect();
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut row = 0;
                for (i, &id) in ids.iter().enumerate() {
                    let rows = row_counts[i];
                    let chunk = g.data()[row * cols..(row + rows) * cols].to_vec();
                    sink.add(id, Tensor::new(shapes[i].clone(), chunk).expect("concat back"));
                    row += rows;
                }
            })),
            None,
        )
    }

    /// Horizontal concatenation; all parts share a row count.
    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let values: Vec<Rc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let rows = values[0].rows();
        assert!(
            values.iter().all(|v| v.rows() == rows),
            "concat_cols row mismatch"
        );
        let widths: Vec<usize> = values.iter().map(|v| v.cols()).collect();
        let total_cols: usize = widths.iter().sum();
        let mut out = Tensor::zeros(&[rows, total_cols]);
        let mut offset = 0;
        for v in &values {
            for r in 0..rows {
                for c in 0..v.cols() {
                    *out.at_mut(r, offset + c) = v.at(r, c);
                }
            }
            offset += v.cols();
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut offset = 0;
                for (i, &id) in ids.iter().enumerate() {
                    let w = widths[i];
                    let mut part = Tensor::zeros(&shapes[i]);
                    for r in 0..rows {
                        for c in 0..w {
                            let v = g.at(r, offset + c);
                            if shapes[i].len() == 1 {
                                part.data_mut()[c] += v;
                            } else {
                                *part.at_mut(r, c) += v;
                            }
                        }
                    }
                    sink.add(id, part);
                    offset += w;
                }
            })),
            None,
        )
    }

    /// Rows r0..r1 (half-open).
    pub fn slice_rows(&self, a: Var, r0: usize, r1: usize) -> Var {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        assert!(r0 < r1 && r1 <= rows, "slice_rows range {r0}..{r1} of {rows}");
        let data = va.data()[r0 * cols..r1 * cols].to_vec();
        let out = Tensor::new(vec![r1 - r0, cols], data).expect("slice_rows shape");
        let shape = va.shape().to_vec();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut back = Tensor::zeros(&shape);
                back.data_mut()[r0 * cols..r1 * cols].copy_from_slice(g.data());
                sink.add(a.0, back);
            })),
            None,
        )
    }

    /// Columns c0..c1 (half-open).
    pub fn slice_cols(&self, a: Var, c0: usize, c1: usize) -> Var {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        assert!(c0 < c1 && c1 <= cols, "slice_cols range {c0}..{c1} of {cols}");
        let w = c1 - c0;
        let mut out = Tensor::zeros(&[rows, w]);
        for r in 0..rows {
            for c in 0..w {
                *out.at_mut(r, c) = va.at(r, c0 + c);
            }
        }
        let shape = va.shape().to_vec();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut back = Tensor::zeros(&shape);
                for r in 0..rows {
                    for c in 0..w {
                        let idx = r * cols + (c0 + c);
                        back.data_mut()[idx] += g.at(r, c);
                    }
                }
                sink.add(a.0, back);
            })),
            None,
        )
    }

    /// Gathers rows by index; duplicate indices are allowed and their
    /// gradients accumulate.
    pub fn gather_rows(&self, a: Var, indices: &[usize]) -> Var {
        let va = self.value(a);
        let cols = va.cols();
        let rows = va.rows();
        assert!(
            indices.iter().all(|&i| i < rows),
            "gather_rows index out of range"
        );
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(va.row(i));
        }
        let out = Tensor::new(vec![indices.len(), cols], data).expect("gather_rows shape");
        let shape = va.shape().to_vec();
        let idx = indices.to_vec();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut back = Tensor::zeros(&shape);
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..cols {
                        back.data_mut()[src * cols + c] += g.at(r, c);
                    }
                }
                sink.add(a.0, back);
            })),
            None,
        )
    }

    /// Picks entries (r, c) into a rank-1 vector; duplicates accumulate on the
    /// way back.
    pub fn select_entries(&self, a: Var, coords: &[(usize, usize)]) -> Var {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        assert!(
            coords.iter().all(|&(r, c)| r < rows && c < cols),
            "select_entries out of range"
        );
        let data: Vec<f64> = coords.iter().map(|&(r, c)| va.at(r, c)).collect();
        let out = Tensor::vector(data);
        let shape = va.shape().to_vec();
        let coords = coords.to_vec();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut back = Tensor::zeros(&shape);
                for (i, &(r, c)) in coords.iter().enumerate() {
                    back.data_mut()[r * cols + c] += g.data()[i];
                }
                sink.add(a.0, back);
            })),
            None,
        )
    }

    pub fn reshape(&self, a: Var, new_shape: &[usize]) -> Var {
        let va = self.value(a);
        let expect: usize = new_shape.iter().product();
        assert_eq!(va.len(), expect, "reshape length mismatch");
        let out = Tensor::new(new_shape.to_vec(), va.data().to_vec()).expect("reshape");
        let old_shape = va.shape().to_vec();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink.add(
                    a.0,
                    Tensor::new(old_shape.clone(), g.data().to_vec()).expect("reshape back"),
                );
            })),
            None,
        )
    }

    /// u (len m) outer v (len n) -> (m x n).
    pub fn outer(&self, u: Var, v: Var) -> Var {
        let (vu, vv) = (self.value(u), self.value(v));
        assert!(vu.rank() == 1 && vv.rank() == 1, "outer wants vectors");
        let (m, n) = (vu.len(), vv.len());
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                *out.at_mut(i, j) = vu.data()[i] * vv.data()[j];
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut du = vec![0.0; m];
                let mut dv = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        du[i] += g.at(i, j) * vv.data()[j];
                        dv[j] += g.at(i, j) * vu.data()[i];
                    }
                }
                sink.add(u.0, Tensor::vector(du));
                sink.add(v.0, Tensor::vector(dv));
            })),
            None,
        )
    }

    /// Sums any number of same-shaped tensors in one node.
    pub fn add_n(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "add_n of nothing");
        let values: Vec<Rc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let shape = values[0].shape().to_vec();
        assert!(
            values.iter().all(|v| v.shape() == shape.as_slice()),
            "add_n shape mismatch"
        );
        let mut out = Tensor::zeros(&shape);
        for v in &values {
            out.add_assign(v);
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                for &id in &ids {
                    sink.add(id, g.clone());
                }
            })),
            None,
        )
    }

    // ---- reductions ----

    pub fn sum_all(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = Tensor::scalar(va.sum());
        let shape = va.shape().to_vec();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink.add(a.0, Tensor::full(&shape, g.item()));
            })),
            None,
        )
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.len() as f64;
        let out = Tensor::scalar(va.sum() / n);
        let shape = va.shape().to_vec();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink.add(a.0, Tensor::full(&shape, g.item() / n));
            })),
            None,
        )
    }

    /// Column means of an (L x D) matrix, i.e. mean pooling over rows -> [D].
    pub fn mean_over_rows(&self, a: Var) -> Var {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c] += va.at(r, c);
            }
        }
        for o in out.iter_mut() {
            *o /= rows as f64;
        }
        self.push(
            Tensor::vector(out),
            Some(Box::new(move |g, sink| {
                let mut back = Tensor::zeros(&[rows, cols]);
                for r in 0..rows {
                    for c in 0..cols {
                        *back.at_mut(r, c) = g.data()[c] / rows as f64;
                    }
                }
                sink.add(a.0, back);
            })),
            None,
        )
    }

    // ---- normalization / attention pieces ----

    /// Row-wise softmax. -inf entries come out exactly 0; a row must keep at
    /// least one finite entry.
    pub fn softmax_rows(&self, a: Var) -> Var {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        let mut out = Tensor::zeros(&[rows, cols]);
        for r in 0..rows {
            let row = va.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(max > f64::NEG_INFINITY, "softmax row {r} fully masked");
            let mut sum = 0.0;
            for c in 0..cols {
                let e = (row[c] - max).exp();
                *out.at_mut(r, c) = e;
                sum += e;
            }
            for c in 0..cols {
                *out.at_mut(r, c) /= sum;
            }
        }
        let y = out.clone();
        let rank1 = va.rank() == 1;
        let out = if rank1 {
            Tensor::vector(out.into_data())
        } else {
            out
        };
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut back = Tensor::zeros(&[rows, cols]);
                for r in 0..rows {
                    let mut dot = 0.0;
                    for c in 0..cols {
                        dot += g.data()[r * cols + c] * y.at(r, c);
                    }
                    for c in 0..cols {
                        *back.at_mut(r, c) = y.at(r, c) * (g.data()[r * cols + c] - dot);
                    }
                }
                let back = if rank1 {
                    Tensor::vector(back.into_data())
                } else {
                    back
                };
                sink.add(a.0, back);
            })),
            None,
        )
    }

    /// Row-wise log-softmax (stable).
    pub fn log_softmax_rows(&self, a: Var) -> Var {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        let mut out = Tensor::zeros(&[rows, cols]);
        let mut soft = Tensor::zeros(&[rows, cols]);
        for r in 0..rows {
            let row = va.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(max.is_finite(), "log_softmax needs a finite row max");
            let mut sum = 0.0;
            for c in 0..cols {
                sum += (row[c] - max).exp();
            }
            let lse = max + sum.ln();
            for c in 0..cols {
                *out.at_mut(r, c) = row[c] - lse;
                *soft.at_mut(r, c) = (row[c] - lse).exp();
            }
        }
        let shape = va.shape().to_vec();
        let out = Tensor::new(shape.clone(), out.into_data()).expect("log_softmax shape");
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut back = Tensor::zeros(&shape);
                for r in 0..rows {
                    let mut gsum = 0.0;
                    for c in 0..cols {
                        gsum += g.data()[r * cols + c];
                    }
                    for c in 0..cols {
                        back.data_mut()[r * cols + c] =
                            g.data()[r * cols + c] - soft.at(r, c) * gsum;
                    }
                }
                sink.add(a.0, back);
            })),
            None,
        )
    }

    /// Per-row layer normalization over the last dimension with learned scale
    /// and shift (rank-1 params of width D).
    pub fn layer_norm_rows(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let vg = self.value(gamma);
        let vb = self.value(beta);
        let (rows, cols) = (vx.rows(), vx.cols());
        assert_eq!(vg.len(), cols, "layer_norm gamma width");
        assert_eq!(vb.len(), cols, "layer_norm beta width");
        let mut norm = Tensor::zeros(&[rows, cols]);
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for c in 0..cols {
                *norm.at_mut(r, c) = (row[c] - mean) * istd;
            }
        }
        let mut out = Tensor::zeros(&[rows, cols]);
        for r in 0..rows {
            for c in 0..cols {
                *out.at_mut(r, c) = norm.at(r, c) * vg.data()[c] + vb.data()[c];
            }
        }
        let shape = vx.shape().to_vec();
        let out = Tensor::new(shape.clone(), out.into_data()).expect("layer_norm shape");
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                let mut dx = Tensor::zeros(&shape);
                for r in 0..rows {
                    let mut dnorm = vec![0.0; cols];
                    for c in 0..cols {
                        let gv = g.data()[r * cols + c];
                        dgamma[c] += gv * norm.at(r, c);
                        dbeta[c] += gv;
                        dnorm[c] = gv * vg.data()[c];
                    }
                    let mean_dnorm = dnorm.iter().sum::<f64>() / cols as f64;
                    let mean_dnorm_norm = dnorm
                        .iter()
                        .enumerate()
                        .map(|(c, d)| d * norm.at(r, c))
                        .sum::<f64>()
                        / cols as f64;
                    for c in 0..cols {
                        dx.data_mut()[r * cols + c] = inv_std[r]
                            * (dnorm[c] - mean_dnorm - norm.at(r, c) * mean_dnorm_norm);
                    }
                }
                sink.add(x.0, dx);
                sink.add(gamma.0, Tensor::vector(dgamma));
                sink.add(beta.0, Tensor::vector(dbeta));
            })),
            None,
        )
    }

    /// Masks strictly-upper-triangular entries of a square matrix to -inf
    /// (position j may attend to positions <= j).
    pub fn causal_mask(&self, a: Var) -> Var {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        assert_eq!(rows, cols, "causal_mask wants a square matrix");
        let mut out = (*va).clone();
        for r in 0..rows {
            for c in (r + 1)..cols {
                *out.at_mut(r, c) = f64::NEG_INFINITY;
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut back = Tensor::zeros(&[rows, cols]);
                for r in 0..rows {
                    for c in 0..=r {
                        *back.at_mut(r, c) = g.at(r, c);
                    }
                }
                sink.add(a.0, back);
            })),
            None,
        )
    }

    /// Inverted dropout driven by a named stream: each entry survives with
    /// probability 1-p and is scaled by 1/(1-p). Call sites skip this node
    /// entirely outside of training.
    pub fn dropout(&self, a: Var, p: f64, rng: &mut StreamRng) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout p in [0,1)");
        let va = self.value(a);
        if p == 0.0 {
            // Still consume no randomness and add no node: identity.
            return a;
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..va.len())
            .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = Tensor::new(va.shape().to_vec(), mask).expect("dropout mask shape");
        let out = va.zip_map(&mask, |x, m| x * m);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink.add(a.0, g.zip_map(&mask, |gv, m| gv * m));
            })),
            None,
        )
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss; accumulates into the `grad` field of
    /// every bound parameter. Call `ParamStore::zero_grads` first unless
    /// accumulation across calls is intended.
    pub fn backward(&self, loss: Var) {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        assert!(loss.0 < n, "loss var not on this tape");
        assert_eq!(
            nodes[loss.0].value.len(),
            1,
            "backward wants a scalar loss, got shape {:?}",
            nodes[loss.0].value.shape()
        );
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(back) = &nodes[id].backward {
                let mut sink = GradSink { grads: &mut grads };
                back(&g, &mut sink);
            }
            if let Some(p) = &nodes[id].param {
                p.borrow_mut().grad.add_assign(&g);
            }
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
pub(crate) fn stable_softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
