//! Minimal reverse-mode differentiation over batch-major matrices.
//!
//! Every node holds a `rows × cols` matrix (rows are batch samples). Input
//! gradients of a network are themselves built as tape nodes, so losses
//! that depend on `∂Ĥ/∂x` are differentiated with respect to the parameters
//! by an ordinary reverse sweep.

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    /// `a + 1·b` for a `1 × cols` row `b`.
    AddRow(Var, Var),
    Tanh(Var),
    /// `1 − a²`
    OneMinusSq(Var),
    Mul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    SumSquares(Var),
    SumAbs(Var),
    Columns(Var, usize),
    HCat(Var, Var),
}

#[derive(Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<DMatrix<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: DMatrix<f64>) -> Var {
        self.ops.push(op);
        self.values.push(value);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][(0, 0)]
    }

    pub fn leaf(&mut self, value: DMatrix<f64>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::MatMul(a, b), v)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b).transpose();
        self.push(Op::MatMulT(a, b), v)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut v = self.value(a).clone();
        let r = self.value(row);
        for mut line in v.row_iter_mut() {
            line += r;
        }
        self.push(Op::AddRow(a, row), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn one_minus_sq(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 - x * x);
        self.push(Op::OneMinusSq(a), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).component_mul(self.value(b));
        self.push(Op::Mul(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(Op::Scale(a, c), v)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = DMatrix::from_element(1, 1, self.value(a).norm_squared());
        self.push(Op::SumSquares(a), v)
    }

    pub fn sum_abs(&mut self, a: Var) -> Var {
        let v = DMatrix::from_element(1, 1, self.value(a).iter().map(|x| x.abs()).sum());
        self.push(Op::SumAbs(a), v)
    }

    pub fn columns(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).columns(start, len).into_owned();
        self.push(Op::Columns(a, start), v)
    }

    pub fn hcat(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut v = DMatrix::zeros(va.nrows(), va.ncols() + vb.ncols());
        v.columns_mut(0, va.ncols()).copy_from(va);
        v.columns_mut(va.ncols(), vb.ncols()).copy_from(vb);
        self.push(Op::HCat(a, b), v)
    }

    /// Adjoints of the leaves with respect to the scalar `output`; interior
    /// adjoints are consumed by the sweep.
    pub fn backward(&self, output: Var) -> Vec<Option<DMatrix<f64>>> {
        let mut adj: Vec<Option<DMatrix<f64>>> = vec![None; self.values.len()];
        adj[output.0] = Some(DMatrix::from_element(1, 1, 1.0));
        fn acc(adj: &mut [Option<DMatrix<f64>>], v: Var, g: DMatrix<f64>) {
            match &mut adj[v.0] {
                Some(a) => *a += g,
                slot => *slot = Some(g),
            }
        }
        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => adj[i] = Some(g),
                Op::MatMul(a, b) => {
                    acc(&mut adj, *a, &g * self.value(*b).transpose());
                    acc(&mut adj, *b, self.value(*a).tr_mul(&g));
                }
                Op::MatMulT(a, b) => {
                    acc(&mut adj, *a, &g * self.value(*b));
                    acc(&mut adj, *b, g.tr_mul(self.value(*a)));
                }
                Op::AddRow(a, row) => {
                    acc(&mut adj, *row, DMatrix::from_fn(1, g.ncols(), |_, j| g.column(j).sum()));
                    acc(&mut adj, *a, g);
                }
                Op::Tanh(a) => {
                    let d = self.values[i].map(|t| 1.0 - t * t);
                    acc(&mut adj, *a, g.component_mul(&d));
                }
                Op::OneMinusSq(a) => {
                    let d = self.value(*a) * -2.0;
                    acc(&mut adj, *a, g.component_mul(&d));
                }
                Op::Mul(a, b) => {
                    acc(&mut adj, *a, g.component_mul(self.value(*b)));
                    acc(&mut adj, *b, g.component_mul(self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, -&g);
                    acc(&mut adj, *a, g);
                }
                Op::Scale(a, c) => acc(&mut adj, *a, g * *c),
                Op::SumSquares(a) => acc(&mut adj, *a, self.value(*a) * (2.0 * g[(0, 0)])),
                Op::SumAbs(a) => {
                    let s = g[(0, 0)];
                    acc(&mut adj, *a, self.value(*a).map(|x| if x == 0.0 { 0.0 } else { s * x.signum() }));
                }
                Op::Columns(a, start) => {
                    let src = self.value(*a);
                    let mut full = DMatrix::zeros(src.nrows(), src.ncols());
                    full.columns_mut(*start, g.ncols()).copy_from(&g);
                    acc(&mut adj, *a, full);
                }
                Op::HCat(a, b) => {
                    let na = self.value(*a).ncols();
                    acc(&mut adj, *a, g.columns(0, na).into_owned());
                    acc(&mut adj, *b, g.columns(na, g.ncols() - na).into_owned());
                }
            }
        }
        adj
    }
}
