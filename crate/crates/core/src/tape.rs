//! Minimal reverse-mode differentiation over row-major matrices.
//!
//! Every value on the tape is a 2-D array. A forward pass records one node per
//! operation; [`Tape::backward`] walks the nodes in reverse and accumulates
//! gradients for the parameter tensors the tape was built against.

use ndarray::{s, Array1, Array2, Axis, Zip};

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Gelu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<F>,
        inv_std: Array1<F>,
    },
    Softmax {
        x: Var,
        causal: bool,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    MeanRows(Var),
    Dropout {
        x: Var,
        mask: Array2<F>,
    },
}

struct Node<F> {
    op: Op<F>,
    value: Array2<F>,
}

pub struct Tape<'p, F: Scalar> {
    params: &'p [Array2<F>],
    nodes: Vec<Node<F>>,
}

const LN_EPS: f64 = 1e-5;

fn gelu_parts<F: Scalar>(x: F) -> (F, F) {
    // tanh approximation; returns (value, derivative)
    let c = F::from_f64c((2.0 / std::f64::consts::PI).sqrt());
    let k = F::from_f64c(0.044715);
    let half = F::from_f64c(0.5);
    let one = F::one();
    let x2 = x * x;
    let inner = c * (x + k * x2 * x);
    let t = inner.tanh();
    let value = half * x * (one + t);
    let dinner = c * (one + F::from_f64c(3.0) * k * x2);
    let deriv = half * (one + t) + half * x * (one - t * t) * dinner;
    (value, deriv)
}

impl<'p, F: Scalar> Tape<'p, F> {
    pub fn new(params: &'p [Array2<F>]) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    fn push(&mut self, op: Op<F>, value: Array2<F>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        match self.nodes[v.0].op {
            Op::Param(i) => &self.params[i],
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Array2<F>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn param(&mut self, index: usize) -> Var {
        self.push(Op::Param(index), Array2::zeros((0, 0)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulT(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(Op::AddRow(a, row), v)
    }

    pub fn scale(&mut self, a: Var, k: F) -> Var {
        let v = self.value(a) * k;
        self.push(Op::Scale(a, k), v)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| gelu_parts(x).0);
        self.push(Op::Gelu(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = F::one();
        let v = self.value(a).mapv(|x| one / (one + (-x).exp()));
        self.push(Op::Sigmoid(a), v)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let n = F::from_usize(cols).unwrap();
        let eps = F::from_f64c(LN_EPS);
        let mut xhat = Array2::zeros((rows, cols));
        let mut inv_std = Array1::zeros(rows);
        for (r, row) in xv.axis_iter(Axis(0)).enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let is = F::one() / (var + eps).sqrt();
            inv_std[r] = is;
            Zip::from(xhat.row_mut(r))
                .and(&row)
                .for_each(|h, &v| *h = (v - mean) * is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            out,
        )
    }

    /// Row softmax. With `causal`, entry `(i, j)` is masked out for `j > i`.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Var {
        let xv = self.value(x);
        let mut out = Array2::zeros(xv.raw_dim());
        for (i, (row, mut o)) in xv
            .axis_iter(Axis(0))
            .zip(out.axis_iter_mut(Axis(0)))
            .enumerate()
        {
            let valid = if causal { (i + 1).min(row.len()) } else { row.len() };
            let max = row
                .iter()
                .take(valid)
                .fold(F::neg_infinity(), |m, &v| m.max(v));
            let mut sum = F::zero();
            for j in 0..valid {
                let e = (row[j] - max).exp();
                o[j] = e;
                sum += e;
            }
            for j in 0..valid {
                o[j] /= sum;
            }
        }
        self.push(Op::Softmax { x, causal }, out)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(Op::SliceCols { x, start }, v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            v.row_mut(r).assign(&t.row(id));
        }
        self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            v,
        )
    }

    /// Mean over rows, giving a `1 × cols` result.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let v = self
            .value(x)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        self.push(Op::MeanRows(x), v)
    }

    /// Inverted dropout with a precomputed keep mask already scaled by `1/(1-p)`.
    pub fn dropout(&mut self, x: Var, mask: Array2<F>) -> Var {
        let v = self.value(x) * &mask;
        self.push(Op::Dropout { x, mask }, v)
    }

    /// Back-propagates `seeds` and adds parameter gradients into `param_grads`.
    pub fn backward(&self, seeds: Vec<(Var, Array2<F>)>, param_grads: &mut [Array2<F>]) {
        let mut grads: Vec<Option<Array2<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            accumulate(&mut grads, v, g);
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(i) => param_grads[*i] += &g,
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g * *k),
                Op::Gelu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gv, &x| *gv *= gelu_parts(x).1);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    let one = F::one();
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|gv, &y| *gv *= y * (one - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gammav = self.value(*gamma);
                    accumulate(
                        &mut grads,
                        *gamma,
                        (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    accumulate(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * gammav;
                    let n = F::from_usize(xhat.ncols()).unwrap();
                    let mut gx = Array2::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let h = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_h = dh.iter().zip(h.iter()).map(|(&a, &b)| a * b).sum::<F>();
                        let is = inv_std[r];
                        Zip::from(gx.row_mut(r))
                            .and(&dh)
                            .and(&h)
                            .for_each(|o, &d, &hv| {
                                *o = is / n * (n * d - sum_dh - hv * sum_dh_h);
                            });
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Softmax { x, causal } => {
                    let y = &node.value;
                    let mut gx = Array2::zeros(y.raw_dim());
                    for i in 0..y.nrows() {
                        let valid = if *causal { (i + 1).min(y.ncols()) } else { y.ncols() };
                        let dot = (0..valid).map(|j| g[[i, j]] * y[[i, j]]).sum::<F>();
                        for j in 0..valid {
                            gx[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceCols { x, start } => {
                    let src = self.value(*x);
                    let mut gx = Array2::zeros(src.raw_dim());
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        let gp = g.slice(s![.., offset..offset + w]).to_owned();
                        offset += w;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::Gather { table, ids } => {
                    if let Op::Param(pi) = self.nodes[table.0].op {
                        let pg = &mut param_grads[pi];
                        for (r, &id) in ids.iter().enumerate() {
                            let mut row = pg.row_mut(id);
                            row += &g.row(r);
                        }
                    } else {
                        let mut gt = Array2::zeros(self.value(*table).raw_dim());
                        for (r, &id) in ids.iter().enumerate() {
                            let mut row = gt.row_mut(id);
                            row += &g.row(r);
                        }
                        accumulate(&mut grads, *table, gt);
                    }
                }
                Op::MeanRows(x) => {
                    let rows = self.value(*x).nrows();
                    let k = F::one() / F::from_usize(rows).unwrap();
                    let gx = g
                        .broadcast((rows, g.ncols()))
                        .expect("row broadcast")
                        .mapv(|v| v * k);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Dropout { x, mask } => accumulate(&mut grads, *x, g * mask),
            }
        }
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Array2<F>>], v: Var, g: Array2<F>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central-difference check of a scalar function `sum(w ⊙ f(params))`.
    fn check<B>(params: Vec<Array2<f64>>, build: B)
    where
        B: Fn(&mut Tape<f64>) -> Var,
    {
        let weight = |shape: (usize, usize)| {
            Array2::from_shape_fn(shape, |(i, j)| 0.3 + 0.17 * i as f64 - 0.11 * j as f64)
        };
        let eval = |ps: &[Array2<f64>]| {
            let mut t = Tape::new(ps);
            let out = build(&mut t);
            let v = t.value(out);
            (v * &weight(v.dim())).sum()
        };
        let mut grads: Vec<_> = params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        {
            let mut t = Tape::new(&params);
            let out = build(&mut t);
            let w = weight(t.value(out).dim());
            t.backward(vec![(out, w)], &mut grads);
        }
        let eps = 1e-6;
        for (pi, p) in params.iter().enumerate() {
            for idx in 0..p.len() {
                let (r, c) = (idx / p.ncols(), idx % p.ncols());
                let mut plus = params.clone();
                plus[pi][[r, c]] += eps;
                let mut minus = params.clone();
                minus[pi][[r, c]] -= eps;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let analytic = grads[pi][[r, c]];
                assert!(
                    (numeric - analytic).abs() < 1e-6 * (1.0 + numeric.abs()),
                    "param {pi} [{r},{c}]: numeric {numeric} analytic {analytic}"
                );
            }
        }
    }

    fn sample(rows: usize, cols: usize, seed: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |(i, j)| {
            ((i * cols + j) as f64 * 0.731 + seed).sin()
        })
    }

    #[test]
    fn matmul_and_bias() {
        check(vec![sample(3, 4, 0.1), sample(4, 2, 0.7), sample(1, 2, 1.3)], |t| {
            let (a, b, r) = (t.param(0), t.param(1), t.param(2));
            let m = t.matmul(a, b);
            t.add_row(m, r)
        });
    }

    #[test]
    fn attention_block() {
        check(vec![sample(4, 6, 0.2), sample(3, 6, 0.5)], |t| {
            let (q, k) = (t.param(0), t.param(1));
            let qh = t.slice_cols(q, 2, 3);
            let kh = t.slice_cols(k, 2, 3);
            let scores = t.matmul_t(qh, kh);
            let scaled = t.scale(scores, 0.5);
            let p = t.softmax(scaled, false);
            let ctx = t.matmul(p, kh);
            let other = t.slice_cols(q, 0, 2);
            t.concat_cols(&[ctx, other])
        });
    }

    #[test]
    fn causal_softmax_and_gelu() {
        check(vec![sample(4, 4, 0.9)], |t| {
            let a = t.param(0);
            let p = t.softmax(a, true);
            t.gelu(p)
        });
    }

    #[test]
    fn layer_norm_pool_sigmoid() {
        check(
            vec![sample(5, 4, 0.3), sample(1, 4, 1.1), sample(1, 4, 2.1)],
            |t| {
                let (x, g, b) = (t.param(0), t.param(1), t.param(2));
                let n = t.layer_norm(x, g, b);
                let m = t.mean_rows(n);
                t.sigmoid(m)
            },
        );
    }

    #[test]
    fn gather_rows_accumulates_repeats() {
        check(vec![sample(5, 3, 0.4)], |t| {
            let table = t.param(0);
            let rows = t.gather(table, &[1, 3, 1, 0]);
            let sq = t.matmul_t(rows, rows);
            t.scale(sq, 0.25)
        });
    }

    #[test]
    fn causal_softmax_masks_future() {
        let params: Vec<Array2<f64>> = vec![array![[1.0, 2.0, 3.0], [0.5, 0.5, 9.0], [0.0, 0.0, 0.0]]];
        let mut t = Tape::new(&params);
        let a = t.param(0);
        let p = t.softmax(a, true);
        let v = t.value(p);
        assert_eq!(v[[0, 0]], 1.0);
        assert_eq!(v[[0, 1]], 0.0);
        assert!((v[[1, 0]] - 0.5).abs() < 1e-12);
        assert_eq!(v[[1, 2]], 0.0);
        assert!((v.row(2).sum() - 1.0).abs() < 1e-12);
    }
}
