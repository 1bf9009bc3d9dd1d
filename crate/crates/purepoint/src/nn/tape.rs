//! Reverse-mode automatic differentiation on a linear tape of 2-d `f64`
//! arrays.
//!
//! Every intermediate is an `Array2<f64>`; row vectors are `1 x D` and scalars
//! are `1 x 1`. Operations record their inputs (and any discrete choices such
//! as max-pool argmaxes or gather indices) at forward time, so the backward
//! pass is a single reverse sweep with no control flow. Discrete selections
//! are deliberately frozen: gradients flow through the *gathered values*, not
//! through the selection itself. That behavior is exactly what the
//! kNN-indexing classifiers need to reproduce their gradient pathologies.
//!
//! The tape is append-only and single-threaded; parallelism happens one tape
//! per sample, never within a tape.

use ndarray::{Array1, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    /// `(N x D) + (1 x D)` row broadcast.
    AddRow(Var, Var),
    /// `(1 x D)` replicated to `(n x D)`.
    BroadcastRows(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    /// Column-wise max over rows; argmax row per column recorded.
    MaxPoolRows(Var, Vec<usize>),
    /// Max within each consecutive block of `k` rows; per (group, column)
    /// offset of the winning row inside its block recorded.
    MaxPoolGroups(Var, usize, Vec<usize>),
    MeanRows(Var),
    SumAll(Var),
    ConcatCols(Var, Var, usize),
    /// Row gather with indices frozen at forward time.
    GatherRows(Var, Vec<usize>),
    /// Row `i` repeated at output rows `i*k .. (i+1)*k`.
    RepeatRows(Var, usize),
    /// Fused softmax cross-entropy of a `1 x C` logit row against a label.
    CrossEntropyLogits(Var, usize),
    SelectEntry(Var, usize, usize),
    /// Max over one row excluding a column; winning column recorded.
    MaxRowExcluding(Var, usize, usize),
    /// `KL(softmax(a) || q)` for a constant distribution `q`.
    KlVsConst(Var, Array1<f64>),
    /// `sum |a - c|` for a constant array `c`.
    L1VsConst(Var, Array2<f64>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Register an input, parameter, or constant. Constants are ordinary
    /// leaves whose gradient nobody reads.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(a))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        debug_assert_eq!(self.value(a).ncols(), self.value(row).ncols());
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn broadcast_rows(&mut self, row: Var, n: usize) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let d = self.value(row).ncols();
        let mut v = Array2::zeros((n, d));
        for mut r in v.rows_mut() {
            r.assign(&self.value(row).row(0));
        }
        self.push(v, Op::BroadcastRows(row))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn maxpool_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, d) = x.dim();
        assert!(n >= 1, "maxpool over empty input");
        let mut out = Array2::zeros((1, d));
        let mut argmax = vec![0usize; d];
        for j in 0..d {
            let mut best = x[[0, j]];
            for i in 1..n {
                if x[[i, j]] > best {
                    best = x[[i, j]];
                    argmax[j] = i;
                }
            }
            out[[0, j]] = best;
        }
        self.push(out, Op::MaxPoolRows(a, argmax))
    }

    pub fn maxpool_groups(&mut self, a: Var, k: usize) -> Var {
        let x = self.value(a);
        let (n, d) = x.dim();
        assert!(k >= 1 && n % k == 0, "rows {n} not divisible by group {k}");
        let g = n / k;
        let mut out = Array2::zeros((g, d));
        let mut argmax = vec![0usize; g * d];
        for gi in 0..g {
            for j in 0..d {
                let mut best = x[[gi * k, j]];
                let mut arg = 0;
                for o in 1..k {
                    if x[[gi * k + o, j]] > best {
                        best = x[[gi * k + o, j]];
                        arg = o;
                    }
                }
                out[[gi, j]] = best;
                argmax[gi * d + j] = arg;
            }
        }
        self.push(out, Op::MaxPoolGroups(a, k, argmax))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x
            .mean_axis(Axis(0))
            .expect("mean over empty input")
            .insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (xa, xb) = (self.value(a), self.value(b));
        debug_assert_eq!(xa.nrows(), xb.nrows());
        let da = xa.ncols();
        let mut v = Array2::zeros((xa.nrows(), da + xb.ncols()));
        v.slice_mut(ndarray::s![.., ..da]).assign(xa);
        v.slice_mut(ndarray::s![.., da..]).assign(xb);
        self.push(v, Op::ConcatCols(a, b, da))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let x = self.value(a);
        let d = x.ncols();
        let mut v = Array2::zeros((idx.len(), d));
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < x.nrows(), "gather index {i} out of range");
            v.row_mut(r).assign(&x.row(i));
        }
        self.push(v, Op::GatherRows(a, idx))
    }

    pub fn repeat_rows(&mut self, a: Var, k: usize) -> Var {
        let x = self.value(a);
        let (n, d) = x.dim();
        let mut v = Array2::zeros((n * k, d));
        for i in 0..n {
            for o in 0..k {
                v.row_mut(i * k + o).assign(&x.row(i));
            }
        }
        self.push(v, Op::RepeatRows(a, k))
    }

    pub fn cross_entropy_logits(&mut self, a: Var, label: usize) -> Var {
        let x = self.value(a);
        debug_assert_eq!(x.nrows(), 1);
        assert!(label < x.ncols(), "label {label} out of range");
        let logits = x.row(0).to_owned();
        let loss = crate::model::cross_entropy(&logits, label);
        self.push(Array2::from_elem((1, 1), loss), Op::CrossEntropyLogits(a, label))
    }

    pub fn select_entry(&mut self, a: Var, i: usize, j: usize) -> Var {
        let v = self.value(a)[[i, j]];
        self.push(Array2::from_elem((1, 1), v), Op::SelectEntry(a, i, j))
    }

    pub fn max_row_excluding(&mut self, a: Var, row: usize, excl: usize) -> Var {
        let x = self.value(a);
        let mut best = f64::NEG_INFINITY;
        let mut arg = usize::MAX;
        for j in 0..x.ncols() {
            if j != excl && x[[row, j]] > best {
                best = x[[row, j]];
                arg = j;
            }
        }
        assert!(arg != usize::MAX, "max_row_excluding needs >= 2 columns");
        self.push(
            Array2::from_elem((1, 1), best),
            Op::MaxRowExcluding(a, row, arg),
        )
    }

    pub fn kl_vs_const(&mut self, a: Var, q: Array1<f64>) -> Var {
        let x = self.value(a);
        debug_assert_eq!(x.nrows(), 1);
        debug_assert_eq!(x.ncols(), q.len());
        let p = crate::model::softmax(&x.row(0).to_owned());
        let kl: f64 = p
            .iter()
            .zip(q.iter())
            .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
            .sum();
        self.push(Array2::from_elem((1, 1), kl), Op::KlVsConst(a, q))
    }

    pub fn l1_vs_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        debug_assert_eq!(self.value(a).dim(), c.dim());
        let s = (self.value(a) - &c).mapv(f64::abs).sum();
        self.push(Array2::from_elem((1, 1), s), Op::L1VsConst(a, c))
    }

    /// Reverse sweep from `from`, seeding its gradient with `seed` (same
    /// shape as its value). Returns the gradients of every node that `from`
    /// depends on; unreachable nodes have no gradient.
    pub fn backward(&self, from: Var, seed: Array2<f64>) -> Gradients {
        assert_eq!(
            self.value(from).dim(),
            seed.dim(),
            "seed shape must match the output value"
        );
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[from.0] = Some(seed);

        for i in (0..=from.0).rev() {
            let Some(g) = grads[i].clone() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads[a.0], ga);
                    acc(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[a.0], g.clone());
                    acc(&mut grads[b.0], g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads[a.0], g.clone());
                    acc(&mut grads[b.0], -g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads[a.0], ga);
                    acc(&mut grads[b.0], gb);
                }
                Op::Scale(a, c) => acc(&mut grads[a.0], g * *c),
                Op::AddScalar(a) => acc(&mut grads[a.0], g),
                Op::AddRow(a, row) => {
                    let grow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads[a.0], g);
                    acc(&mut grads[row.0], grow);
                }
                Op::BroadcastRows(row) => {
                    let grow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads[row.0], grow);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    acc(&mut grads[a.0], &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads[a.0], &g * &mask);
                }
                Op::LeakyRelu(a, s) => {
                    let slope = *s;
                    let mask = self
                        .value(*a)
                        .mapv(|x| if x > 0.0 { 1.0 } else { slope });
                    acc(&mut grads[a.0], &g * &mask);
                }
                Op::MaxPoolRows(a, argmax) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for (j, &r) in argmax.iter().enumerate() {
                        ga[[r, j]] = g[[0, j]];
                    }
                    acc(&mut grads[a.0], ga);
                }
                Op::MaxPoolGroups(a, k, argmax) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    let d = ga.ncols();
                    for gi in 0..g.nrows() {
                        for j in 0..d {
                            ga[[gi * k + argmax[gi * d + j], j]] = g[[gi, j]];
                        }
                    }
                    acc(&mut grads[a.0], ga);
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).nrows();
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for mut r in ga.rows_mut() {
                        r.assign(&(&g.row(0) / n as f64));
                    }
                    acc(&mut grads[a.0], ga);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(&mut grads[a.0], ga);
                }
                Op::ConcatCols(a, b, da) => {
                    let ga = g.slice(ndarray::s![.., ..*da]).to_owned();
                    let gb = g.slice(ndarray::s![.., *da..]).to_owned();
                    acc(&mut grads[a.0], ga);
                    acc(&mut grads[b.0], gb);
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut dst = ga.row_mut(src);
                        dst += &g.row(r);
                    }
                    acc(&mut grads[a.0], ga);
                }
                Op::RepeatRows(a, k) => {
                    let n = self.value(*a).nrows();
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for r in 0..n {
                        for o in 0..*k {
                            let mut dst = ga.row_mut(r);
                            dst += &g.row(r * k + o);
                        }
                    }
                    acc(&mut grads[a.0], ga);
                }
                Op::CrossEntropyLogits(a, label) => {
                    let logits = self.value(*a).row(0).to_owned();
                    let mut p = crate::model::softmax(&logits);
                    p[*label] -= 1.0;
                    let ga = p.insert_axis(Axis(0)) * g[[0, 0]];
                    acc(&mut grads[a.0], ga);
                }
                Op::SelectEntry(a, si, sj) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga[[*si, *sj]] = g[[0, 0]];
                    acc(&mut grads[a.0], ga);
                }
                Op::MaxRowExcluding(a, row, arg) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga[[*row, *arg]] = g[[0, 0]];
                    acc(&mut grads[a.0], ga);
                }
                Op::KlVsConst(a, q) => {
                    let logits = self.value(*a).row(0).to_owned();
                    let p = crate::model::softmax(&logits);
                    let kl: f64 = p
                        .iter()
                        .zip(q.iter())
                        .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
                        .sum();
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for j in 0..p.len() {
                        ga[[0, j]] = g[[0, 0]] * p[j] * ((p[j].ln() - q[j].ln()) - kl);
                    }
                    acc(&mut grads[a.0], ga);
                }
                Op::L1VsConst(a, c) => {
                    let diff = self.value(*a) - c;
                    let ga = diff.mapv(|d| d.signum() * g[[0, 0]]);
                    acc(&mut grads[a.0], ga);
                }
            }
        }
        Gradients { grads }
    }
}

fn acc(slot: &mut Option<Array2<f64>>, delta: Array2<f64>) {
    match slot {
        Some(g) => *g += &delta,
        None => *slot = Some(delta),
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of its value shape if `v` was unreachable.
    pub fn of(&self, tape: &Tape, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(tape.value(v).dim()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, stream};
    use approx::assert_relative_eq;
    use ndarray::arr2;

    /// Central finite differences of a scalar-valued tape program w.r.t. one
    /// leaf, compared against the backward pass at every coordinate.
    fn check_grad<F>(build: F, input: Array2<f64>, tol: f64)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let out = build(&mut tape, x);
        assert_eq!(tape.value(out).dim(), (1, 1), "program must end in a scalar");
        let grads = tape.backward(out, arr2(&[[1.0]]));
        let analytic = grads.of(&tape, x);

        let h = 1e-6;
        for i in 0..input.nrows() {
            for j in 0..input.ncols() {
                let eval = |v: f64| {
                    let mut t = Tape::new();
                    let mut pert = input.clone();
                    pert[[i, j]] = v;
                    let xv = t.leaf(pert);
                    let o = build(&mut t, xv);
                    t.value(o)[[0, 0]]
                };
                let fd = (eval(input[[i, j]] + h) - eval(input[[i, j]] - h)) / (2.0 * h);
                let denom = fd.abs().max(analytic[[i, j]].abs()).max(1e-4);
                assert!(
                    (fd - analytic[[i, j]]).abs() / denom < tol,
                    "coord ({i},{j}): fd {fd} vs analytic {}",
                    analytic[[i, j]]
                );
            }
        }
    }

    #[test]
    fn linear_quadratic_hand_case() {
        // f = sum((x W)^2), df/dx = 2 (x W) W^T
        let mut tape = Tape::new();
        let xv = arr2(&[[1.0, 2.0]]);
        let wv = arr2(&[[3.0, 0.5], [-1.0, 2.0]]);
        let x = tape.leaf(xv.clone());
        let w = tape.leaf(wv.clone());
        let h = tape.matmul(x, w);
        let h2 = tape.mul(h, h);
        let out = tape.sum_all(h2);
        let grads = tape.backward(out, arr2(&[[1.0]]));
        let expected = xv.dot(&wv).dot(&wv.t()) * 2.0;
        let got = grads.of(&tape, x);
        assert_relative_eq!(got[[0, 0]], expected[[0, 0]], max_relative = 1e-12);
        assert_relative_eq!(got[[0, 1]], expected[[0, 1]], max_relative = 1e-12);
        // W also receives a gradient: x^T (2 xW)
        let gw = grads.of(&tape, w);
        let expw = xv.t().dot(&(xv.dot(&wv) * 2.0));
        assert_relative_eq!(gw[[1, 0]], expw[[1, 0]], max_relative = 1e-12);
    }

    #[test]
    fn fd_mlp_with_pool_and_ce() {
        let mut rng = stream(1);
        let w1 = normal_matrix(&mut rng, 3, 5);
        let b1 = normal_matrix(&mut rng, 1, 5);
        let w2 = normal_matrix(&mut rng, 5, 4);
        let input = normal_matrix(&mut rng, 6, 3);
        check_grad(
            move |t, x| {
                let w1 = t.leaf(w1.clone());
                let b1 = t.leaf(b1.clone());
                let w2 = t.leaf(w2.clone());
                let h = t.matmul(x, w1);
                let h = t.add_row(h, b1);
                let h = t.tanh(h);
                let pooled = t.maxpool_rows(h);
                let logits = t.matmul(pooled, w2);
                t.cross_entropy_logits(logits, 2)
            },
            input,
            1e-4,
        );
    }

    #[test]
    fn fd_gather_repeat_concat_groups() {
        let mut rng = stream(2);
        let w = normal_matrix(&mut rng, 6, 4);
        let input = normal_matrix(&mut rng, 5, 3);
        let idx = vec![1, 4, 0, 2, 3, 3, 0, 1, 2, 4];
        check_grad(
            move |t, x| {
                let w = t.leaf(w.clone());
                let gathered = t.gather_rows(x, idx.clone()); // 10 x 3
                let center = t.repeat_rows(x, 2); // 10 x 3
                let rel = t.sub(gathered, center);
                let edge = t.concat_cols(center, rel); // 10 x 6
                let h = t.matmul(edge, w);
                let h = t.leaky_relu(h, 0.2);
                let pooled = t.maxpool_groups(h, 2); // 5 x 4
                let m = t.mean_rows(pooled);
                let sq = t.mul(m, m);
                t.sum_all(sq)
            },
            input,
            1e-4,
        );
    }

    #[test]
    fn fd_broadcast_scale_relu() {
        let mut rng = stream(3);
        let input = normal_matrix(&mut rng, 1, 4);
        check_grad(
            |t, x| {
                let b = t.broadcast_rows(x, 3); // 3 x 4
                let s = t.scale(b, -1.7);
                let s = t.add_scalar(s, 0.3);
                let r = t.relu(s);
                t.sum_all(r)
            },
            input,
            1e-4,
        );
    }

    #[test]
    fn fd_margin_ops() {
        let input = arr2(&[[0.3, -1.2, 2.1, 0.9]]);
        check_grad(
            |t, x| {
                let correct = t.select_entry(x, 0, 2);
                let other = t.max_row_excluding(x, 0, 2);
                let margin = t.sub(correct, other);
                let shifted = t.add_scalar(margin, 0.1);
                t.relu(shifted)
            },
            input,
            1e-4,
        );
    }

    #[test]
    fn fd_kl_and_l1() {
        let q = crate::model::softmax(&ndarray::arr1(&[0.2, -0.4, 1.0]));
        let input = arr2(&[[0.5, 1.5, -0.3]]);
        check_grad(
            move |t, x| t.kl_vs_const(x, q.clone()),
            input.clone(),
            1e-4,
        );
        let c = arr2(&[[0.1, 0.2, 0.3]]);
        // keep away from the |.| kink
        check_grad(move |t, x| t.l1_vs_const(x, c.clone()), input, 1e-4);
    }

    #[test]
    fn cross_entropy_grad_is_softmax_minus_onehot() {
        let mut tape = Tape::new();
        let logits = arr2(&[[1.0, -0.5, 0.25]]);
        let x = tape.leaf(logits.clone());
        let loss = tape.cross_entropy_logits(x, 1);
        let grads = tape.backward(loss, arr2(&[[1.0]]));
        let p = crate::model::softmax(&logits.row(0).to_owned());
        let g = grads.of(&tape, x);
        assert_relative_eq!(g[[0, 0]], p[0], max_relative = 1e-12);
        assert_relative_eq!(g[[0, 1]], p[1] - 1.0, max_relative = 1e-12);
        assert_relative_eq!(g[[0, 2]], p[2], max_relative = 1e-12);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax_only() {
        let mut tape = Tape::new();
        let x = tape.leaf(arr2(&[[1.0, 5.0], [3.0, 2.0], [2.0, 4.0]]));
        let pooled = tape.maxpool_rows(x);
        let s = tape.sum_all(pooled);
        let grads = tape.backward(s, arr2(&[[1.0]]));
        let g = grads.of(&tape, x);
        assert_eq!(g, arr2(&[[0.0, 1.0], [1.0, 0.0], [0.0, 0.0]]));
    }

    #[test]
    fn gather_is_frozen_scatter_add() {
        let mut tape = Tape::new();
        let x = tape.leaf(arr2(&[[1.0], [2.0], [3.0]]));
        let gathered = tape.gather_rows(x, vec![0, 0, 2]);
        let s = tape.sum_all(gathered);
        let grads = tape.backward(s, arr2(&[[1.0]]));
        // row 0 picked twice, row 1 never, row 2 once
        assert_eq!(grads.of(&tape, x), arr2(&[[2.0], [0.0], [1.0]]));
    }

    #[test]
    fn square_via_self_mul_doubles() {
        let mut tape = Tape::new();
        let x = tape.leaf(arr2(&[[3.0]]));
        let sq = tape.mul(x, x);
        let grads = tape.backward(sq, arr2(&[[1.0]]));
        assert_eq!(grads.of(&tape, x)[[0, 0]], 6.0);
    }

    #[test]
    fn unreachable_nodes_have_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(arr2(&[[1.0]]));
        let y = tape.leaf(arr2(&[[2.0]]));
        let s = tape.scale(x, 2.0);
        let _dead = tape.scale(y, 3.0);
        let grads = tape.backward(s, arr2(&[[1.0]]));
        assert!(grads.get(y).is_none());
        assert_eq!(grads.of(&tape, y), arr2(&[[0.0]]));
    }
}
