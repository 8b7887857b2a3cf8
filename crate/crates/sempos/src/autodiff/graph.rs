//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation builds a [`Var`] node holding the eagerly computed value
//! plus, per parent, a closure that maps the upstream gradient to that
//! parent's local contribution. [`Var::backward`] walks nodes in reverse
//! construction order (children strictly precede parents), so each node's
//! upstream gradient is complete before it is propagated. Gradients
//! accumulate into a persistent slot: a second `backward` without
//! [`Var::zero_grad`] adds the same contribution again, exactly doubling
//! every gradient.

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use super::tensor::Tensor;
use super::Error;

/// Maps (upstream gradient, this node's value) to one parent's gradient
/// contribution.
type GradFn = Box<dyn Fn(&Tensor, &Tensor) -> Tensor>;

struct Node {
    /// Construction-order id; unique per thread and strictly increasing, so
    /// sorting by it yields a valid reverse topological order.
    id: u64,
    value: Tensor,
    grad: Option<Tensor>,
    /// Upstream gradient being assembled during the current backward pass.
    pending: Option<Tensor>,
    parents: Vec<(Var, GradFn)>,
    op: &'static str,
}

impl Drop for Node {
    // Deep chains (one node per LSTM step per gate) would otherwise recurse
    // through `parents` on drop; unlink iteratively instead.
    fn drop(&mut self) {
        let mut stack: Vec<(Var, GradFn)> = std::mem::take(&mut self.parents);
        while let Some((var, _)) = stack.pop() {
            if let Ok(cell) = Rc::try_unwrap(var.inner) {
                let mut node = cell.into_inner();
                stack.append(&mut node.parents);
            }
        }
    }
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Shared handle to a graph node. Cloning is cheap and aliases the node.
#[derive(Clone)]
pub struct Var {
    inner: Rc<RefCell<Node>>,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.inner.borrow();
        f.debug_struct("Var")
            .field("op", &n.op)
            .field("shape", &n.value.shape())
            .field("id", &n.id)
            .finish()
    }
}

impl Var {
    fn from_node(value: Tensor, parents: Vec<(Var, GradFn)>, op: &'static str) -> Var {
        let mut value = value;
        let requires = value.requires_grad()
            || parents
                .iter()
                .any(|(p, _)| p.inner.borrow().value.requires_grad());
        value.set_requires_grad(requires);
        Var {
            inner: Rc::new(RefCell::new(Node {
                id: next_id(),
                value,
                grad: None,
                pending: None,
                parents,
                op,
            })),
        }
    }

    /// Wraps a tensor as a graph input with no gradient tracking.
    pub fn leaf(value: Tensor) -> Var {
        Var::from_node(value, Vec::new(), "leaf")
    }

    /// Wraps a tensor as a trainable parameter (gradient tracking on).
    pub fn parameter(value: Tensor) -> Var {
        Var::from_node(value.with_grad(), Vec::new(), "parameter")
    }

    pub fn scalar(v: f64) -> Var {
        Var::leaf(Tensor::scalar(v))
    }

    pub fn value(&self) -> Tensor {
        self.inner.borrow().value.clone()
    }

    /// Runs `f` against the node's value without cloning it.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.inner.borrow().value)
    }

    /// In-place mutation of the value (optimizer updates, finite-difference
    /// probes). The graph is not rebuilt; downstream values are stale until
    /// recomputed.
    pub fn with_value_mut<R>(&self, f: impl FnOnce(&mut Tensor) -> R) -> R {
        f(&mut self.inner.borrow_mut().value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().value.numel()
    }

    pub fn item(&self) -> Result<f64, Error> {
        self.inner.borrow().value.item()
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().value.requires_grad()
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    /// Reverse-mode sweep from a scalar root. Accumulates into each
    /// reachable node's gradient slot (adding to whatever is already there).
    pub fn backward(&self) -> Result<(), Error> {
        {
            let n = self.inner.borrow();
            if n.value.numel() != 1 {
                return Err(Error::NonScalarRoot {
                    shape: n.value.shape().to_vec(),
                });
            }
        }

        // Collect every ancestor, then order children-before-parents by
        // descending construction id (a child is always created after all of
        // its parents).
        let mut visited: HashSet<usize> = HashSet::new();
        let mut order: Vec<(u64, Var)> = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !visited.insert(v.key()) {
                continue;
            }
            {
                let n = v.inner.borrow();
                for (p, _) in &n.parents {
                    stack.push(p.clone());
                }
            }
            let id = v.inner.borrow().id;
            order.push((id, v));
        }
        order.sort_by(|a, b| b.0.cmp(&a.0));

        {
            let mut root = self.inner.borrow_mut();
            let shape = root.value.shape().to_vec();
            root.pending = Some(Tensor::ones(shape));
        }

        for (_, v) in &order {
            let upstream = match v.inner.borrow_mut().pending.take() {
                Some(g) => g,
                None => continue,
            };
            {
                let n = v.inner.borrow();
                for (parent, gradfn) in &n.parents {
                    let contrib = gradfn(&upstream, &n.value);
                    debug_assert_eq!(
                        contrib.shape(),
                        parent.inner.borrow().value.shape(),
                        "gradient shape mismatch in op {}",
                        n.op
                    );
                    let mut p = parent.inner.borrow_mut();
                    match &mut p.pending {
                        Some(acc) => acc.add_assign(&contrib),
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            let mut n = v.inner.borrow_mut();
            match &mut n.grad {
                Some(acc) => acc.add_assign(&upstream),
                slot @ None => *slot = Some(upstream),
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Operations
    // ------------------------------------------------------------------

    /// Matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Var) -> Result<Var, Error> {
        let ok = self.with_value(|a| {
            rhs.with_value(|b| a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows())
        });
        if !ok {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", self.shape(), rhs.shape()),
            });
        }
        let out = self.with_value(|a| rhs.with_value(|b| matmul_raw(a, b)));
        let rhs_for_lhs = rhs.clone();
        let lhs_for_rhs = self.clone();
        Ok(Var::from_node(
            out,
            vec![
                (
                    self.clone(),
                    Box::new(move |g, _| rhs_for_lhs.with_value(|bv| matmul_nt_raw(g, bv))),
                ),
                (
                    rhs.clone(),
                    Box::new(move |g, _| lhs_for_rhs.with_value(|av| matmul_tn_raw(av, g))),
                ),
            ],
            "matmul",
        ))
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Result<Var, Error> {
        if self.with_value(|a| a.rank()) != 2 {
            return Err(Error::DimensionMismatch {
                op: "transpose",
                detail: format!("need rank 2, got {:?}", self.shape()),
            });
        }
        Ok(Var::from_node(
            self.with_value(transpose_raw),
            vec![(self.clone(), Box::new(|g, _| transpose_raw(g)))],
            "transpose",
        ))
    }

    /// Concatenates rank-1 tensors end to end (`axis` 0) or rank-2 tensors
    /// along rows (`axis` 0) / columns (`axis` 1).
    pub fn concat(parts: &[Var], axis: usize) -> Result<Var, Error> {
        if parts.is_empty() {
            return Err(Error::EmptyInput);
        }
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape()).collect();
        let rank = shapes[0].len();
        if rank == 0 || rank > 2 || axis >= rank {
            return Err(Error::DimensionMismatch {
                op: "concat",
                detail: format!("axis {} on rank {}", axis, rank),
            });
        }
        for s in shapes.iter().skip(1) {
            let ok = s.len() == rank
                && (0..rank).all(|d| d == axis || s[d] == shapes[0][d]);
            if !ok {
                return Err(Error::DimensionMismatch {
                    op: "concat",
                    detail: format!("{:?} vs {:?} along axis {}", shapes[0], s, axis),
                });
            }
        }

        let out = if rank == 1 || axis == 0 {
            // Row-major layout makes axis-0 concatenation a plain append.
            let mut data = Vec::new();
            for p in parts {
                p.with_value(|v| data.extend_from_slice(v.data()));
            }
            let mut shape = shapes[0].clone();
            shape[0] = shapes.iter().map(|s| s[0]).sum();
            Tensor::from_parts(shape, data)
        } else {
            let rows = shapes[0][0];
            let total: usize = shapes.iter().map(|s| s[1]).sum();
            let mut data = Vec::with_capacity(rows * total);
            for row in 0..rows {
                for p in parts {
                    p.with_value(|v| data.extend_from_slice(v.row_slice(row)));
                }
            }
            Tensor::from_parts(vec![rows, total], data)
        };

        let mut parents: Vec<(Var, GradFn)> = Vec::with_capacity(parts.len());
        let mut offset = 0usize;
        for (p, s) in parts.iter().zip(shapes.iter()) {
            let start = offset;
            let extent = s[axis];
            offset += extent;
            let shape = s.clone();
            parents.push((
                p.clone(),
                Box::new(move |g, _| slice_along_axis(g, axis, start, extent, &shape)),
            ));
        }
        Ok(Var::from_node(out, parents, "concat"))
    }

    /// Stacks rank-1 tensors of equal length into a `[rows, len]` matrix.
    pub fn stack_rows(rows: &[Var]) -> Result<Var, Error> {
        if rows.is_empty() {
            return Err(Error::EmptyInput);
        }
        let width = rows[0].numel();
        let mut as_rows = Vec::with_capacity(rows.len());
        for r in rows {
            as_rows.push(r.reshape(&[1, width])?);
        }
        Var::concat(&as_rows, 0)
    }

    pub fn tanh(&self) -> Var {
        let mut v = self.value();
        for x in v.data_mut() {
            *x = x.tanh();
        }
        Var::from_node(
            v,
            vec![(self.clone(), Box::new(|g, y| map2(g, y, |g, y| g * (1.0 - y * y))))],
            "tanh",
        )
    }

    pub fn sigmoid(&self) -> Var {
        let mut v = self.value();
        for x in v.data_mut() {
            *x = 1.0 / (1.0 + (-*x).exp());
        }
        Var::from_node(
            v,
            vec![(self.clone(), Box::new(|g, y| map2(g, y, |g, y| g * y * (1.0 - y))))],
            "sigmoid",
        )
    }

    /// Elementwise square root; callers guarantee strictly positive inputs.
    pub fn sqrt(&self) -> Var {
        let mut v = self.value();
        for x in v.data_mut() {
            *x = x.sqrt();
        }
        Var::from_node(
            v,
            vec![(self.clone(), Box::new(|g, y| map2(g, y, |g, y| g * 0.5 / y)))],
            "sqrt",
        )
    }

    /// Softmax over the last axis (the whole vector for rank 1, each row for
    /// rank 2). Numerically stabilized by max subtraction; each row of the
    /// output sums to 1.
    pub fn softmax(&self) -> Result<Var, Error> {
        let ok = self.with_value(|v| v.rank() != 0 && v.numel() != 0);
        if !ok {
            return Err(Error::DimensionMismatch {
                op: "softmax",
                detail: format!("need rank 1 or 2 with data, got {:?}", self.shape()),
            });
        }
        let out = self.with_value(softmax_raw);
        Ok(Var::from_node(
            out,
            vec![(
                self.clone(),
                Box::new(|g, y| {
                    // Per row: dx = y * (g - <g, y>).
                    let width = *y.shape().last().unwrap();
                    let mut dx = vec![0.0; y.numel()];
                    for row in 0..y.numel() / width {
                        let ys = &y.data()[row * width..(row + 1) * width];
                        let gs = &g.data()[row * width..(row + 1) * width];
                        let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                        for j in 0..width {
                            dx[row * width + j] = ys[j] * (gs[j] - dot);
                        }
                    }
                    Tensor::from_parts(y.shape().to_vec(), dx)
                }),
            )],
            "softmax",
        ))
    }

    pub fn add(&self, rhs: &Var) -> Result<Var, Error> {
        self.zip(rhs, "add", |a, b| a + b, AddKind::Add)
    }

    pub fn sub(&self, rhs: &Var) -> Result<Var, Error> {
        self.zip(rhs, "sub", |a, b| a - b, AddKind::Sub)
    }

    pub fn mul(&self, rhs: &Var) -> Result<Var, Error> {
        self.zip(rhs, "mul", |a, b| a * b, AddKind::Mul)
    }

    pub fn div(&self, rhs: &Var) -> Result<Var, Error> {
        self.zip(rhs, "div", |a, b| a / b, AddKind::Div)
    }

    fn zip(
        &self,
        rhs: &Var,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        kind: AddKind,
    ) -> Result<Var, Error> {
        let out = self.with_value(|a| {
            rhs.with_value(|b| {
                if a.shape() != b.shape() {
                    return Err(Error::DimensionMismatch {
                        op,
                        detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
                    });
                }
                let data: Vec<f64> = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| f(x, y))
                    .collect();
                Ok(Tensor::from_parts(a.shape().to_vec(), data))
            })
        })?;

        let (lhs_h, rhs_h) = (self.clone(), rhs.clone());
        let (ga, gb): (GradFn, GradFn) = match kind {
            AddKind::Add => (
                Box::new(|g, _| g.clone()),
                Box::new(|g, _| g.clone()),
            ),
            AddKind::Sub => (
                Box::new(|g, _| g.clone()),
                Box::new(|g, _| scale_raw(g, -1.0)),
            ),
            AddKind::Mul => (
                Box::new(move |g, _| rhs_h.with_value(|b| map2(g, b, |g, b| g * b))),
                Box::new(move |g, _| lhs_h.with_value(|a| map2(g, a, |g, a| g * a))),
            ),
            AddKind::Div => {
                let rhs_for_a = rhs.clone();
                let rhs_for_b = rhs.clone();
                (
                    Box::new(move |g, _| rhs_for_a.with_value(|b| map2(g, b, |g, b| g / b))),
                    // d(a/b)/db = -a/b^2 = -y/b where y is this node's value.
                    Box::new(move |g, y| {
                        rhs_for_b.with_value(|b| {
                            let data: Vec<f64> = g
                                .data()
                                .iter()
                                .zip(y.data())
                                .zip(b.data())
                                .map(|((&g, &y), &b)| -g * y / b)
                                .collect();
                            Tensor::from_parts(g.shape().to_vec(), data)
                        })
                    }),
                )
            }
        };
        Ok(Var::from_node(
            out,
            vec![(self.clone(), ga), (rhs.clone(), gb)],
            op,
        ))
    }

    /// Adds a rank-1 bias of length `n` to every row of an `[m,n]` matrix —
    /// the only broadcasting rule in the graph.
    pub fn add_bias(&self, bias: &Var) -> Result<Var, Error> {
        let out = self.with_value(|a| {
            bias.with_value(|b| {
                if a.rank() != 2 || b.rank() != 1 || a.cols() != b.numel() {
                    return Err(Error::DimensionMismatch {
                        op: "add_bias",
                        detail: format!("{:?} + {:?}", a.shape(), b.shape()),
                    });
                }
                let (m, n) = (a.rows(), a.cols());
                let mut data = a.data().to_vec();
                for row in 0..m {
                    for (d, bv) in data[row * n..(row + 1) * n].iter_mut().zip(b.data()) {
                        *d += bv;
                    }
                }
                Ok(Tensor::from_parts(vec![m, n], data))
            })
        })?;
        let n = bias.numel();
        Ok(Var::from_node(
            out,
            vec![
                (self.clone(), Box::new(|g, _| g.clone())),
                (
                    bias.clone(),
                    Box::new(move |g, _| {
                        let mut db = vec![0.0; n];
                        for row in 0..g.numel() / n {
                            for col in 0..n {
                                db[col] += g.data()[row * n + col];
                            }
                        }
                        Tensor::from_parts(vec![n], db)
                    }),
                ),
            ],
            "add_bias",
        ))
    }

    pub fn scale(&self, c: f64) -> Var {
        let out = self.with_value(|v| scale_raw(v, c));
        Var::from_node(
            out,
            vec![(self.clone(), Box::new(move |g, _| scale_raw(g, c)))],
            "scale",
        )
    }

    /// Sum of all elements, yielding a scalar.
    pub fn sum_all(&self) -> Var {
        let total: f64 = self.with_value(|v| v.data().iter().sum());
        let shape = self.shape();
        Var::from_node(
            Tensor::scalar(total),
            vec![(
                self.clone(),
                Box::new(move |g, _| {
                    let gv = g.data()[0];
                    Tensor::from_parts(shape.clone(), vec![gv; shape.iter().product()])
                }),
            )],
            "sum_all",
        )
    }

    /// Mean of all elements, yielding a scalar.
    pub fn mean_all(&self) -> Result<Var, Error> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(self.sum_all().scale(1.0 / n as f64))
    }

    /// Column-wise mean of a `[t, d]` matrix, yielding `[d]`.
    pub fn mean_rows(&self) -> Result<Var, Error> {
        let ok = self.with_value(|v| v.rank() == 2 && v.rows() != 0);
        if !ok {
            return Err(Error::DimensionMismatch {
                op: "mean_rows",
                detail: format!("need non-empty rank 2, got {:?}", self.shape()),
            });
        }
        let (t, d) = self.with_value(|v| (v.rows(), v.cols()));
        let inv = 1.0 / t as f64;
        let out = self.with_value(|v| {
            let mut out = vec![0.0; d];
            for row in 0..t {
                for col in 0..d {
                    out[col] += v.at2(row, col);
                }
            }
            for o in &mut out {
                *o *= inv;
            }
            out
        });
        Ok(Var::from_node(
            Tensor::from_parts(vec![d], out),
            vec![(
                self.clone(),
                Box::new(move |g, _| {
                    let mut dx = vec![0.0; t * d];
                    for row in 0..t {
                        for col in 0..d {
                            dx[row * d + col] = g.data()[col] * inv;
                        }
                    }
                    Tensor::from_parts(vec![t, d], dx)
                }),
            )],
            "mean_rows",
        ))
    }

    /// Extracts row `index` of an `[r, c]` matrix as a `[c]` vector; the
    /// backward pass scatters into an otherwise-zero matrix.
    pub fn select_row(&self, index: usize) -> Result<Var, Error> {
        if self.with_value(|v| v.rank()) != 2 {
            return Err(Error::DimensionMismatch {
                op: "select_row",
                detail: format!("need rank 2, got {:?}", self.shape()),
            });
        }
        let (r, c) = self.with_value(|v| (v.rows(), v.cols()));
        if index >= r {
            return Err(Error::IndexOutOfRange {
                op: "select_row",
                index,
                bound: r,
            });
        }
        let row = self.with_value(|v| v.row_slice(index).to_vec());
        Ok(Var::from_node(
            Tensor::from_parts(vec![c], row),
            vec![(
                self.clone(),
                Box::new(move |g, _| {
                    let mut dx = vec![0.0; r * c];
                    dx[index * c..(index + 1) * c].copy_from_slice(g.data());
                    Tensor::from_parts(vec![r, c], dx)
                }),
            )],
            "select_row",
        ))
    }

    /// Repeats a `[d]` vector as `t` identical rows of a `[t, d]` matrix;
    /// the backward pass sums over rows.
    pub fn tile_rows(&self, t: usize) -> Result<Var, Error> {
        let ok = self.with_value(|v| v.rank() == 1) && t > 0;
        if !ok {
            return Err(Error::DimensionMismatch {
                op: "tile_rows",
                detail: format!("need rank 1 and t > 0, got {:?} x {}", self.shape(), t),
            });
        }
        let d = self.numel();
        let data = self.with_value(|v| {
            let mut data = Vec::with_capacity(t * d);
            for _ in 0..t {
                data.extend_from_slice(v.data());
            }
            data
        });
        Ok(Var::from_node(
            Tensor::from_parts(vec![t, d], data),
            vec![(
                self.clone(),
                Box::new(move |g, _| {
                    let mut dx = vec![0.0; d];
                    for row in 0..t {
                        for col in 0..d {
                            dx[col] += g.data()[row * d + col];
                        }
                    }
                    Tensor::from_parts(vec![d], dx)
                }),
            )],
            "tile_rows",
        ))
    }

    /// Shape change preserving element count and order.
    pub fn reshape(&self, shape: &[usize]) -> Result<Var, Error> {
        if shape.iter().product::<usize>() != self.numel() || shape.len() > 3 {
            return Err(Error::DimensionMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape(), shape),
            });
        }
        let old = self.shape();
        let out = self.with_value(|v| Tensor::from_parts(shape.to_vec(), v.data().to_vec()));
        Ok(Var::from_node(
            out,
            vec![(
                self.clone(),
                Box::new(move |g, _| Tensor::from_parts(old.clone(), g.data().to_vec())),
            )],
            "reshape",
        ))
    }

    /// Matrix-vector product `[r,k] x [k] -> [r]`.
    pub fn matvec(&self, v: &Var) -> Result<Var, Error> {
        let ok = self.with_value(|a| {
            v.with_value(|x| a.rank() == 2 && x.rank() == 1 && a.cols() == x.numel())
        });
        if !ok {
            return Err(Error::DimensionMismatch {
                op: "matvec",
                detail: format!("{:?} x {:?}", self.shape(), v.shape()),
            });
        }
        let out = self.with_value(|a| v.with_value(|x| matvec_raw(a, x)));
        let mat_h = self.clone();
        let vec_h = v.clone();
        Ok(Var::from_node(
            out,
            vec![
                (
                    self.clone(),
                    Box::new(move |g, _| vec_h.with_value(|x| outer_raw(g, x))),
                ),
                (
                    v.clone(),
                    Box::new(move |g, _| mat_h.with_value(|a| vecmat_raw(g, a))),
                ),
            ],
            "matvec",
        ))
    }

    /// Inner product of two equal-length rank-1 tensors.
    pub fn dot(&self, rhs: &Var) -> Result<Var, Error> {
        Ok(self.mul(rhs)?.sum_all())
    }

    /// Summed token negative log-likelihood of `targets` under row-wise
    /// softmax of `[n, v]` logits, fused for numerical stability
    /// (log-sum-exp with max subtraction).
    pub fn cross_entropy_logits(&self, targets: &[usize]) -> Result<Var, Error> {
        if self.with_value(|l| l.rank()) != 2 {
            return Err(Error::DimensionMismatch {
                op: "cross_entropy_logits",
                detail: format!("need rank 2, got {:?}", self.shape()),
            });
        }
        let (n, v) = self.with_value(|l| (l.rows(), l.cols()));
        if targets.len() != n {
            return Err(Error::DimensionMismatch {
                op: "cross_entropy_logits",
                detail: format!("{} rows vs {} targets", n, targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::IndexOutOfRange {
                op: "cross_entropy_logits",
                index: bad,
                bound: v,
            });
        }

        let mut probs = vec![0.0; n * v];
        let mut total = 0.0;
        self.with_value(|logits| {
            for row in 0..n {
                let xs = logits.row_slice(row);
                let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for &x in xs {
                    denom += (x - max).exp();
                }
                let lse = max + denom.ln();
                total += lse - xs[targets[row]];
                for (j, &x) in xs.iter().enumerate() {
                    probs[row * v + j] = (x - max).exp() / denom;
                }
            }
        });
        let probs = Tensor::from_parts(vec![n, v], probs);
        let targets = targets.to_vec();
        Ok(Var::from_node(
            Tensor::scalar(total),
            vec![(
                self.clone(),
                Box::new(move |g, _| {
                    let gv = g.data()[0];
                    let mut dx = probs.data().to_vec();
                    for (row, &t) in targets.iter().enumerate() {
                        dx[row * v + t] -= 1.0;
                    }
                    for d in &mut dx {
                        *d *= gv;
                    }
                    Tensor::from_parts(vec![n, v], dx)
                }),
            )],
            "cross_entropy_logits",
        ))
    }
}

enum AddKind {
    Add,
    Sub,
    Mul,
    Div,
}

// ----------------------------------------------------------------------
// Raw tensor kernels shared by forward and backward passes.
// ----------------------------------------------------------------------

pub(crate) fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    debug_assert_eq!(k, b.rows());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row_slice(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data()[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

pub(crate) fn transpose_raw(a: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.at2(i, j);
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

/// `a x b^T` for `a [m,n]`, `b [k,n] -> [m,k]` without materializing the
/// transpose: row-against-row dot products keep every access contiguous.
pub(crate) fn matmul_nt_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let k = b.rows();
    debug_assert_eq!(n, b.cols());
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = a.row_slice(i);
        let orow = &mut out[i * k..(i + 1) * k];
        for (j, o) in orow.iter_mut().enumerate() {
            *o = arow.iter().zip(b.row_slice(j)).map(|(&x, &y)| x * y).sum();
        }
    }
    Tensor::from_parts(vec![m, k], out)
}

/// `a^T x b` for `a [m,k]`, `b [m,n] -> [k,n]` via rank-1 accumulation,
/// again all-contiguous.
pub(crate) fn matmul_tn_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    debug_assert_eq!(m, b.rows());
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let brow = b.row_slice(i);
        for (p, &av) in a.row_slice(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_parts(vec![k, n], out)
}

/// `[r,k] x [k] -> [r]` as row dot products.
pub(crate) fn matvec_raw(a: &Tensor, x: &Tensor) -> Tensor {
    let (r, xs) = (a.rows(), x.data());
    let mut out = Vec::with_capacity(r);
    for i in 0..r {
        out.push(a.row_slice(i).iter().zip(xs).map(|(&w, &v)| w * v).sum());
    }
    Tensor::from_parts(vec![r], out)
}

/// Outer product `g [r] x x [k] -> [r,k]` (matvec gradient wrt the matrix).
fn outer_raw(g: &Tensor, x: &Tensor) -> Tensor {
    let (r, k) = (g.numel(), x.numel());
    let mut out = vec![0.0; r * k];
    for (i, &gi) in g.data().iter().enumerate() {
        let orow = &mut out[i * k..(i + 1) * k];
        for (o, &xv) in orow.iter_mut().zip(x.data()) {
            *o = gi * xv;
        }
    }
    Tensor::from_parts(vec![r, k], out)
}

/// `g^T x a` for `g [r]`, `a [r,k] -> [k]` (matvec gradient wrt the vector).
fn vecmat_raw(g: &Tensor, a: &Tensor) -> Tensor {
    let k = a.cols();
    let mut out = vec![0.0; k];
    for (i, &gi) in g.data().iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        for (o, &av) in out.iter_mut().zip(a.row_slice(i)) {
            *o += gi * av;
        }
    }
    Tensor::from_parts(vec![k], out)
}

fn scale_raw(a: &Tensor, c: f64) -> Tensor {
    let data: Vec<f64> = a.data().iter().map(|&x| x * c).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn map2(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn softmax_raw(v: &Tensor) -> Tensor {
    let width = *v.shape().last().unwrap();
    let mut out = v.data().to_vec();
    for row in 0..v.numel() / width {
        let xs = &mut out[row * width..(row + 1) * width];
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for x in xs.iter_mut() {
            *x = (*x - max).exp();
            denom += *x;
        }
        for x in xs.iter_mut() {
            *x /= denom;
        }
    }
    Tensor::from_parts(v.shape().to_vec(), out)
}

fn slice_along_axis(
    g: &Tensor,
    axis: usize,
    start: usize,
    extent: usize,
    out_shape: &[usize],
) -> Tensor {
    if g.rank() == 1 || axis == 0 {
        let width: usize = if g.rank() == 1 { 1 } else { g.cols() };
        let data = g.data()[start * width..(start + extent) * width].to_vec();
        Tensor::from_parts(out_shape.to_vec(), data)
    } else {
        let rows = g.rows();
        let mut data = Vec::with_capacity(rows * extent);
        for row in 0..rows {
            let slice = &g.row_slice(row)[start..start + extent];
            data.extend_from_slice(slice);
        }
        Tensor::from_parts(out_shape.to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(data: &[f64]) -> Tensor {
        Tensor::new(vec![data.len()], data.to_vec()).unwrap()
    }

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_forward_matches_hand_product() {
        let a = Var::leaf(t2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = Var::leaf(t2(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.value().data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Var::leaf(t2(2, 3, &[0.0; 6]));
        let b = Var::leaf(t2(2, 2, &[0.0; 4]));
        assert!(matches!(
            a.matmul(&b),
            Err(Error::DimensionMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn backward_through_product_and_sum() {
        // loss = sum(a * b); d loss / d a = b, d loss / d b = a.
        let a = Var::parameter(t1(&[1.0, 2.0, 3.0]));
        let b = Var::parameter(t1(&[4.0, 5.0, 6.0]));
        let loss = a.mul(&b).unwrap().sum_all();
        assert_eq!(loss.item().unwrap(), 32.0);
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap().data(), &[4.0, 5.0, 6.0]);
        assert_eq!(b.grad().unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn backward_twice_doubles_gradients() {
        let a = Var::parameter(t1(&[2.0, -1.0]));
        let loss = a.mul(&a).unwrap().sum_all();
        loss.backward().unwrap();
        let first = a.grad().unwrap();
        loss.backward().unwrap();
        let second = a.grad().unwrap();
        for (f, s) in first.data().iter().zip(second.data()) {
            assert_eq!(*s, 2.0 * *f);
        }
        a.zero_grad();
        assert!(a.grad().is_none());
    }

    #[test]
    fn backward_requires_scalar_root() {
        let a = Var::parameter(t1(&[1.0, 2.0]));
        let y = a.tanh();
        assert!(matches!(y.backward(), Err(Error::NonScalarRoot { .. })));
    }

    #[test]
    fn shared_subexpression_accumulates_both_paths() {
        // loss = sum(x) + sum(x) -> grad = 2 everywhere.
        let x = Var::parameter(t1(&[1.0, 1.0, 1.0]));
        let loss = x.sum_all().add(&x.sum_all()).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ties_split_evenly() {
        let x = Var::leaf(t2(2, 3, &[5.0, 5.0, 5.0, 0.1, 0.2, 0.3]));
        let y = x.softmax().unwrap().value();
        for row in 0..2 {
            let s: f64 = y.row_slice(row).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        for &p in y.row_slice(0) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = Var::leaf(t1(&[1.0, 2.0, 3.0]));
        let b = Var::leaf(t1(&[1001.0, 1002.0, 1003.0]));
        let ya = a.softmax().unwrap().value();
        let yb = b.softmax().unwrap().value();
        for (x, y) in ya.data().iter().zip(yb.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_axis1_and_backward_slices() {
        let a = Var::parameter(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = Var::parameter(t2(2, 1, &[5.0, 6.0]));
        let c = Var::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.value().data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        // Weighted sum picks out distinct coefficients per slot.
        let w = Var::leaf(t2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let loss = c.mul(&w).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap().data(), &[1.0, 2.0, 4.0, 5.0]);
        assert_eq!(b.grad().unwrap().data(), &[3.0, 6.0]);
    }

    #[test]
    fn concat_rejects_ragged_inputs() {
        let a = Var::leaf(t2(2, 2, &[0.0; 4]));
        let b = Var::leaf(t2(3, 1, &[0.0; 3]));
        assert!(a.shape() != b.shape());
        assert!(Var::concat(&[a, b], 1).is_err());
        assert!(matches!(Var::concat(&[], 0), Err(Error::EmptyInput)));
    }

    #[test]
    fn select_row_scatter_gradient() {
        let m = Var::parameter(t2(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let r = m.select_row(1).unwrap();
        assert_eq!(r.value().data(), &[3.0, 4.0]);
        let loss = r.sum_all();
        loss.backward().unwrap();
        assert_eq!(
            m.grad().unwrap().data(),
            &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]
        );
        assert!(matches!(
            m.select_row(3),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn tile_rows_backward_sums_rows() {
        let v = Var::parameter(t1(&[1.0, 2.0]));
        let tiled = v.tile_rows(3).unwrap();
        assert_eq!(tiled.shape(), vec![3, 2]);
        let w = Var::leaf(t2(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]));
        tiled.mul(&w).unwrap().sum_all().backward().unwrap();
        assert_eq!(v.grad().unwrap().data(), &[6.0, 6.0]);
    }

    #[test]
    fn mean_rows_matches_hand_average() {
        let m = Var::parameter(t2(2, 3, &[1.0, 2.0, 3.0, 5.0, 6.0, 7.0]));
        let mu = m.mean_rows().unwrap();
        assert_eq!(mu.value().data(), &[3.0, 4.0, 5.0]);
        mu.sum_all().backward().unwrap();
        for &g in m.grad().unwrap().data() {
            assert_eq!(g, 0.5);
        }
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_v_per_step() {
        // Equal logits over 3 classes: each step costs ln 3.
        let logits = Var::parameter(t2(2, 3, &[0.0; 6]));
        let loss = logits.cross_entropy_logits(&[0, 2]).unwrap();
        let expect = 2.0 * 3.0f64.ln();
        assert!((loss.item().unwrap() - expect).abs() < 1e-12);
        loss.backward().unwrap();
        let g = logits.grad().unwrap();
        // softmax - onehot: 1/3 everywhere, minus 1 at the target.
        assert!((g.at2(0, 0) - (1.0 / 3.0 - 1.0)).abs() < 1e-12);
        assert!((g.at2(0, 1) - 1.0 / 3.0).abs() < 1e-12);
        assert!((g.at2(1, 2) - (1.0 / 3.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_checks_targets() {
        let logits = Var::leaf(t2(2, 3, &[0.0; 6]));
        assert!(matches!(
            logits.cross_entropy_logits(&[0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            logits.cross_entropy_logits(&[0, 3]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn cross_entropy_survives_large_logits() {
        let logits = Var::parameter(t2(1, 3, &[1000.0, 0.0, -1000.0]));
        let loss = logits.cross_entropy_logits(&[0]).unwrap();
        assert!(loss.item().unwrap().is_finite());
        assert!(loss.item().unwrap() >= 0.0);
        loss.backward().unwrap();
        assert!(logits.grad().unwrap().all_finite());
    }

    #[test]
    fn matvec_forward_and_backward_hand_case() {
        let m = Var::parameter(t2(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, -1.0]));
        let v = Var::parameter(t1(&[3.0, 4.0, 5.0]));
        let r = m.matvec(&v).unwrap();
        assert_eq!(r.shape(), vec![2]);
        assert_eq!(r.value().data(), &[13.0, -1.0]);
        // sum(r): dm = ones(2) (x) v, dv = m^T ones(2).
        r.sum_all().backward().unwrap();
        assert_eq!(m.grad().unwrap().data(), &[3.0, 4.0, 5.0, 3.0, 4.0, 5.0]);
        assert_eq!(v.grad().unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn div_backward_hand_case() {
        // y = a/b at a=6, b=2: dy/da = 1/2, dy/db = -6/4.
        let a = Var::parameter(t1(&[6.0]));
        let b = Var::parameter(t1(&[2.0]));
        let y = a.div(&b).unwrap().sum_all();
        y.backward().unwrap();
        assert!((a.grad().unwrap().data()[0] - 0.5).abs() < 1e-15);
        assert!((b.grad().unwrap().data()[0] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn deep_chain_drops_without_stack_overflow() {
        let mut v = Var::parameter(t1(&[0.5]));
        for _ in 0..200_000 {
            v = v.scale(1.0);
        }
        drop(v); // must not recurse
    }

    #[test]
    fn add_bias_broadcasts_rows() {
        let x = Var::parameter(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = Var::parameter(t1(&[10.0, 20.0]));
        let y = x.add_bias(&b).unwrap();
        assert_eq!(y.value().data(), &[11.0, 22.0, 13.0, 24.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(b.grad().unwrap().data(), &[2.0, 2.0]);
    }
}
