//! Minimal reverse-mode differentiation over 2-D `f64` arrays.
//!
//! A [`Tape`] records every intermediate value together with the operation
//! that produced it. [`Tape::backward`] walks the record in reverse and
//! returns gradients for the parameter leaves only. Constant leaves (data,
//! or parameters held fixed) never receive gradient.

use ndarray::{s, Array2, Axis};

pub type Var = usize;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<f64>, inv_std: Vec<f64> },
    SoftmaxRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    L2NormRow(Var, f64),
    Mse(Var, Var),
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.values.len() - 1
    }

    /// A constant input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A trainable input whose gradient is reported under `index`.
    pub fn param(&mut self, index: usize, value: Array2<f64>) -> Var {
        self.push(value, Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a].dot(&self.values[b]);
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a].dot(&self.values[b].t());
        self.push(v, Op::MatMulBT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.values[a] + &self.values[b];
        self.push(v, Op::Add(a, b))
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = &self.values[a] + &self.values[row];
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = &self.values[a] * k;
        self.push(v, Op::Scale(a, k))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.values[a].mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise layer normalisation with affine 1×n `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = &self.values[x];
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let y = &(&xhat * &self.values[gamma]) + &self.values[beta];
        self.push(
            y,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(&self.values[a]);
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.values[a].slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.values[p].view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Column means as a 1×n row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.values[a].mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    /// Scales a single row to unit L2 norm.
    pub fn l2_normalize_row(&mut self, a: Var) -> Var {
        let x = &self.values[a];
        debug_assert_eq!(x.nrows(), 1);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let v = x / norm;
        self.push(v, Op::L2NormRow(a, norm))
    }

    /// Mean squared difference as a 1×1 value.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = &self.values[a] - &self.values[b];
        let v = d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64;
        self.push(Array2::from_elem((1, 1), v), Op::Mse(a, b))
    }

    /// Back-propagates the given output gradients and returns
    /// `(param index, gradient)` pairs, one per parameter leaf reached.
    pub fn backward(&self, seeds: &[(Var, Array2<f64>)]) -> Vec<(usize, Array2<f64>)> {
        let n = self.values.len();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v] {
                Some(x) => *x += &g,
                slot => *slot = Some(g),
            }
        }
        let mut top = 0;
        for (v, g) in seeds {
            assert_eq!(self.values[*v].dim(), g.dim(), "seed shape");
            acc(&mut grads, *v, g.clone());
            top = top.max(*v + 1);
        }
        let mut out = Vec::new();
        for i in (0..top).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Param(p) => out.push((*p, g)),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.values[*b].t());
                    let gb = self.values[*a].t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulBT(a, b) => {
                    let ga = g.dot(&self.values[*b]);
                    let gb = g.t().dot(&self.values[*a]);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, r) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::Gelu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&self.values[*a], |gv, &x| *gv *= gelu_grad(x));
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ggamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * &self.values[*gamma];
                    let n = xhat.ncols() as f64;
                    let mut gx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let m1 = dh.sum() / n;
                        let m2 = dh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..xhat.ncols() {
                            gx[[r, c]] = inv_std[r] * (dh[c] - m1 - xh[c] * m2);
                        }
                    }
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *beta, gbeta);
                    acc(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(a) => {
                    let p = &self.values[i];
                    let mut ga = &g * p;
                    for (mut row, prow) in ga.rows_mut().into_iter().zip(p.rows()) {
                        let s: f64 = row.sum();
                        row.zip_mut_with(&prow, |v, &pv| *v -= pv * s);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.values[*a].dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.values[p].ncols();
                        acc(&mut grads, p, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::MeanRows(a) => {
                    let rows = self.values[*a].nrows();
                    let row = g.row(0).mapv(|v| v / rows as f64);
                    let ga = row.broadcast((rows, row.len())).expect("broadcast").to_owned();
                    acc(&mut grads, *a, ga);
                }
                Op::L2NormRow(a, norm) => {
                    let y = &self.values[i];
                    let dot: f64 = (&g * y).sum();
                    let ga = (&g - &(y * dot)) / *norm;
                    acc(&mut grads, *a, ga);
                }
                Op::Mse(a, b) => {
                    let d = &self.values[*a] - &self.values[*b];
                    let k = 2.0 * g[[0, 0]] / d.len() as f64;
                    let ga = d * k;
                    acc(&mut grads, *b, -&ga);
                    acc(&mut grads, *a, ga);
                }
            }
        }
        out
    }
}
