//! Second-order elliptic operators on the unit cube and their
//! finite-difference discretization with zero Dirichlet data.
//!
//! Two forms are supported:
//!
//! * non-divergence: `a_ij d_i d_j u + b_i d_i u + c u`, coefficients given
//!   as closed-form expressions;
//! * divergence: `d_i (a_ij d_j u)` with bounded, possibly discontinuous
//!   `a`, discretized in flux form with arithmetic face averages.

use ndarray::{Array1, ArrayView1};
use thiserror::Error;

use crate::grid::SpatialGrid;
use crate::linalg::CsrMatrix;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("ellipticity violated at x = {point:?}: smallest eigenvalue {value}")]
    Ellipticity { point: Vec<f64>, value: f64 },
    #[error("coefficient matrix not symmetric at x = {point:?}: a[{i}][{j}] != a[{j}][{i}]")]
    Asymmetric { point: Vec<f64>, i: usize, j: usize },
    #[error("coefficient is not finite at x = {0:?}")]
    NonFinite(Vec<f64>),
    #[error("operator has dimension {spec}, grid has dimension {grid}")]
    Dimension { spec: usize, grid: usize },
    #[error("field has {got} values, grid has {expected} nodes")]
    Shape { expected: usize, got: usize },
    #[error("shift {alpha} is smaller than max c = {c_max}")]
    InsufficientShift { alpha: f64, c_max: f64 },
    #[error("zero-order shift only applies to non-divergence operators")]
    NotNonDivergence,
    #[error("operator must be validated against a grid first")]
    NotValidated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorForm {
    NonDivergence,
    Divergence,
}

/// Closed-form coefficient expression evaluated pointwise.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarField<T> {
    Constant(T),
    /// `below` for `x[axis] < at`, `above` for `x[axis] > at`, their mean at `at`.
    Step { axis: usize, at: T, below: T, above: T },
    /// `mean + amplitude * sin(2 pi wavenumber x[axis])`.
    Sine {
        axis: usize,
        mean: T,
        amplitude: T,
        wavenumber: T,
    },
    /// `scale * inner + offset`.
    Affine {
        inner: Box<ScalarField<T>>,
        scale: T,
        offset: T,
    },
}

impl<T: Real> ScalarField<T> {
    pub fn zero() -> Self {
        Self::Constant(T::zero())
    }

    pub fn eval(&self, x: &[T]) -> T {
        match self {
            Self::Constant(v) => *v,
            Self::Step {
                axis,
                at,
                below,
                above,
            } => {
                let xi = x[*axis];
                if xi < *at {
                    *below
                } else if xi > *at {
                    *above
                } else {
                    (*below + *above) * T::lit(0.5)
                }
            }
            Self::Sine {
                axis,
                mean,
                amplitude,
                wavenumber,
            } => *mean + *amplitude * (T::TAU() * *wavenumber * x[*axis]).sin(),
            Self::Affine {
                inner,
                scale,
                offset,
            } => *scale * inner.eval(x) + *offset,
        }
    }

    pub fn as_constant(&self) -> Option<T> {
        match self {
            Self::Constant(v) => Some(*v),
            _ => None,
        }
    }

    pub fn shifted(&self, by: T) -> Self {
        match self {
            Self::Constant(v) => Self::Constant(*v + by),
            Self::Affine {
                inner,
                scale,
                offset,
            } => Self::Affine {
                inner: inner.clone(),
                scale: *scale,
                offset: *offset + by,
            },
            other => Self::Affine {
                inner: Box::new(other.clone()),
                scale: T::one(),
                offset: by,
            },
        }
    }
}

/// Ellipticity constants and zero-order bounds measured on a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipticity<T> {
    pub lambda_min: T,
    pub lambda_max: T,
    /// `max_Q c`, zero for divergence form.
    pub c_max: T,
    /// `max(0, max_Q c)`.
    pub c_bar: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec<T> {
    form: OperatorForm,
    dim: usize,
    /// Row-major `dim x dim`.
    a: Vec<ScalarField<T>>,
    b: Vec<ScalarField<T>>,
    c: ScalarField<T>,
    bounds: Option<Ellipticity<T>>,
}

impl<T: Real> OperatorSpec<T> {
    pub fn non_divergence(
        dim: usize,
        a: Vec<ScalarField<T>>,
        b: Vec<ScalarField<T>>,
        c: ScalarField<T>,
    ) -> Self {
        assert_eq!(a.len(), dim * dim, "a must be dim x dim");
        assert_eq!(b.len(), dim, "b must have dim entries");
        Self {
            form: OperatorForm::NonDivergence,
            dim,
            a,
            b,
            c,
            bounds: None,
        }
    }

    pub fn divergence(dim: usize, a: Vec<ScalarField<T>>) -> Self {
        assert_eq!(a.len(), dim * dim, "a must be dim x dim");
        Self {
            form: OperatorForm::Divergence,
            dim,
            a,
            b: vec![ScalarField::zero(); dim],
            c: ScalarField::zero(),
            bounds: None,
        }
    }

    fn identity_matrix(dim: usize, diag: impl Fn(usize) -> ScalarField<T>) -> Vec<ScalarField<T>> {
        (0..dim * dim)
            .map(|k| {
                if k / dim == k % dim {
                    diag(k / dim)
                } else {
                    ScalarField::zero()
                }
            })
            .collect()
    }

    pub fn laplacian(dim: usize) -> Self {
        Self::with_reaction(dim, T::zero())
    }

    /// `Delta + c` with constant `c`.
    pub fn with_reaction(dim: usize, c: T) -> Self {
        Self::non_divergence(
            dim,
            Self::identity_matrix(dim, |_| ScalarField::Constant(T::one())),
            vec![ScalarField::zero(); dim],
            ScalarField::Constant(c),
        )
    }

    /// Smooth variable coefficients: `a = (1 + amp sin(2 pi x_0)) I`,
    /// `b_0 = amp sin(2 pi x_0)`, `c = 0`. Elliptic for `amp < 1`.
    pub fn smooth_variable(dim: usize, amplitude: T) -> Self {
        let wave = |mean| ScalarField::Sine {
            axis: 0,
            mean,
            amplitude,
            wavenumber: T::one(),
        };
        let mut b = vec![ScalarField::zero(); dim];
        b[0] = wave(T::zero());
        Self::non_divergence(
            dim,
            Self::identity_matrix(dim, |_| wave(T::one())),
            b,
            ScalarField::zero(),
        )
    }

    /// Divergence form with `a = s(x_0) I`, `s` jumping from `below` to
    /// `above` across `x_0 = at`.
    pub fn divergence_step(dim: usize, below: T, above: T, at: T) -> Self {
        Self::divergence(
            dim,
            Self::identity_matrix(dim, |_| ScalarField::Step {
                axis: 0,
                at,
                below,
                above,
            }),
        )
    }

    pub fn form(&self) -> OperatorForm {
        self.form
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a(&self, i: usize, j: usize) -> &ScalarField<T> {
        &self.a[i * self.dim + j]
    }

    pub fn b(&self, i: usize) -> &ScalarField<T> {
        &self.b[i]
    }

    pub fn c(&self) -> &ScalarField<T> {
        &self.c
    }

    /// Bounds measured by [`OperatorSpec::validate`], if it has run.
    pub fn bounds(&self) -> Option<&Ellipticity<T>> {
        self.bounds.as_ref()
    }

    /// `Some(c)` when the operator is `Delta + c` with constant `c`.
    pub fn laplacian_shift(&self) -> Option<T> {
        if self.form != OperatorForm::NonDivergence {
            return None;
        }
        for i in 0..self.dim {
            for j in 0..self.dim {
                let want = if i == j { T::one() } else { T::zero() };
                if self.a(i, j).as_constant() != Some(want) {
                    return None;
                }
            }
        }
        if self.b.iter().any(|b| b.as_constant() != Some(T::zero())) {
            return None;
        }
        self.c.as_constant()
    }

    /// Scans every grid node and records ellipticity constants and `c_bar`.
    pub fn validate(&self, grid: &SpatialGrid) -> Result<Self, OperatorError> {
        if grid.dim() != self.dim {
            return Err(OperatorError::Dimension {
                spec: self.dim,
                grid: grid.dim(),
            });
        }
        let d = self.dim;
        let mut lambda_min = T::infinity();
        let mut lambda_max = T::neg_infinity();
        let mut c_max = T::neg_infinity();
        for idx in 0..grid.len() {
            let x: Vec<T> = grid.coords(idx);
            let point = || x.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>();
            let mut m = vec![T::zero(); d * d];
            for i in 0..d {
                for j in 0..d {
                    m[i * d + j] = self.a(i, j).eval(&x);
                }
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(OperatorError::NonFinite(point()));
            }
            for i in 0..d {
                for j in (i + 1)..d {
                    let scale = m[i * d + j].abs().max(m[j * d + i].abs()).max(T::one());
                    if (m[i * d + j] - m[j * d + i]).abs() > T::lit(1e-12) * scale {
                        return Err(OperatorError::Asymmetric { point: point(), i, j });
                    }
                }
            }
            let (lo, hi) = symmetric_eigen_range(&m, d);
            if !(lo > T::zero()) {
                return Err(OperatorError::Ellipticity {
                    point: point(),
                    value: lo.to_f64_lossy(),
                });
            }
            lambda_min = lambda_min.min(lo);
            lambda_max = lambda_max.max(hi);
            let c = self.c.eval(&x);
            let b_ok = self.b.iter().all(|b| b.eval(&x).is_finite());
            if !c.is_finite() || !b_ok {
                return Err(OperatorError::NonFinite(point()));
            }
            c_max = c_max.max(c);
        }
        let mut out = self.clone();
        out.bounds = Some(Ellipticity {
            lambda_min,
            lambda_max,
            c_max,
            c_bar: c_max.max(T::zero()),
        });
        Ok(out)
    }

    /// Replaces `c` by `c - alpha`, the operator seen by `exp(-alpha t) u`.
    pub fn shift_zero_order(&self, alpha: T) -> Result<Self, OperatorError> {
        if self.form != OperatorForm::NonDivergence {
            return Err(OperatorError::NotNonDivergence);
        }
        let bounds = self.bounds.ok_or(OperatorError::NotValidated)?;
        if alpha < bounds.c_max {
            return Err(OperatorError::InsufficientShift {
                alpha: alpha.to_f64_lossy(),
                c_max: bounds.c_max.to_f64_lossy(),
            });
        }
        let mut out = self.clone();
        if alpha != T::zero() {
            out.c = self.c.shifted(-alpha);
        }
        let c_max = bounds.c_max - alpha;
        out.bounds = Some(Ellipticity {
            c_max,
            c_bar: c_max.max(T::zero()),
            ..bounds
        });
        Ok(out)
    }

    /// Sparse matrix of the discrete operator acting on interior nodes,
    /// ordered as [`SpatialGrid::interior_indices`].
    pub fn assemble(&self, grid: &SpatialGrid) -> Result<CsrMatrix<T>, OperatorError> {
        if grid.dim() != self.dim {
            return Err(OperatorError::Dimension {
                spec: self.dim,
                grid: grid.dim(),
            });
        }
        let stencil = Stencil::new(grid);
        let d = self.dim;
        let h = grid.spacing::<T>();
        let h2 = h * h;
        let half = T::lit(0.5);
        let quarter = T::lit(0.25);
        let rows = stencil
            .interior
            .iter()
            .map(|&idx| {
                let m = grid.multi_index(idx);
                let x: Vec<T> = grid.coords(idx);
                let mut row: Vec<(usize, T)> = Vec::with_capacity(1 + 4 * d * d);
                let mut push = |off: &[i64], v: T| {
                    if let Some(col) = stencil.neighbor(&m, off) {
                        row.push((col, v));
                    }
                };
                let unit = |i: usize, s: i64| {
                    let mut o = vec![0i64; d];
                    o[i] = s;
                    o
                };
                let pair = |i: usize, si: i64, j: usize, sj: i64| {
                    let mut o = vec![0i64; d];
                    o[i] += si;
                    o[j] += sj;
                    o
                };
                let zero = vec![0i64; d];
                let shifted_x = |i: usize, s: T| {
                    let mut y = x.clone();
                    y[i] = y[i] + s * h;
                    y
                };
                match self.form {
                    OperatorForm::NonDivergence => {
                        for i in 0..d {
                            let aii = self.a(i, i).eval(&x);
                            push(&zero, -T::lit(2.0) * aii / h2);
                            push(&unit(i, 1), aii / h2);
                            push(&unit(i, -1), aii / h2);
                            let bi = self.b(i).eval(&x) / (T::lit(2.0) * h);
                            push(&unit(i, 1), bi);
                            push(&unit(i, -1), -bi);
                            for j in 0..d {
                                if j == i {
                                    continue;
                                }
                                let aij = self.a(i, j).eval(&x) * quarter / h2;
                                push(&pair(i, 1, j, 1), aij);
                                push(&pair(i, 1, j, -1), -aij);
                                push(&pair(i, -1, j, 1), -aij);
                                push(&pair(i, -1, j, -1), aij);
                            }
                        }
                        push(&zero, self.c.eval(&x));
                    }
                    OperatorForm::Divergence => {
                        for i in 0..d {
                            let here = self.a(i, i).eval(&x);
                            let up = (here + self.a(i, i).eval(&shifted_x(i, T::one()))) * half;
                            let down = (here + self.a(i, i).eval(&shifted_x(i, -T::one()))) * half;
                            push(&unit(i, 1), up / h2);
                            push(&unit(i, -1), down / h2);
                            push(&zero, -(up + down) / h2);
                            for j in 0..d {
                                if j == i {
                                    continue;
                                }
                                let ap = self.a(i, j).eval(&shifted_x(i, T::one())) * quarter / h2;
                                let am = self.a(i, j).eval(&shifted_x(i, -T::one())) * quarter / h2;
                                push(&pair(i, 1, j, 1), ap);
                                push(&pair(i, 1, j, -1), -ap);
                                push(&pair(i, -1, j, 1), -am);
                                push(&pair(i, -1, j, -1), am);
                            }
                        }
                    }
                }
                row
            })
            .collect();
        Ok(CsrMatrix::from_rows(rows))
    }

    /// Applies the discrete operator to a full-grid field. Boundary values
    /// are read as zero and the result vanishes on the boundary.
    pub fn apply(&self, grid: &SpatialGrid, field: ArrayView1<T>) -> Result<Array1<T>, OperatorError> {
        if field.len() != grid.len() {
            return Err(OperatorError::Shape {
                expected: grid.len(),
                got: field.len(),
            });
        }
        let matrix = self.assemble(grid)?;
        let interior = grid.interior_indices();
        let inner = Array1::from_iter(interior.iter().map(|&i| field[i]));
        let out_inner = matrix.matvec(inner.view());
        let mut out = Array1::zeros(grid.len());
        for (k, &i) in interior.iter().enumerate() {
            out[i] = out_inner[k];
        }
        Ok(out)
    }
}

/// Smallest and largest eigenvalue of a symmetric `d x d` matrix, `d <= 2`.
fn symmetric_eigen_range<T: Real>(m: &[T], d: usize) -> (T, T) {
    match d {
        1 => (m[0], m[0]),
        2 => {
            let (p, q, r) = (m[0], m[1], m[3]);
            let mean = (p + r) * T::lit(0.5);
            let rad = (((p - r) * T::lit(0.5)).powi(2) + q * q).sqrt();
            (mean - rad, mean + rad)
        }
        _ => unreachable!("domain dimension is capped at 2"),
    }
}

/// Interior numbering and neighbor lookup for stencil assembly.
struct Stencil {
    nx: usize,
    interior: Vec<usize>,
    /// Full-grid index -> interior position.
    position: Vec<Option<usize>>,
    grid: SpatialGrid,
}

impl Stencil {
    fn new(grid: &SpatialGrid) -> Self {
        let interior = grid.interior_indices();
        let mut position = vec![None; grid.len()];
        for (k, &i) in interior.iter().enumerate() {
            position[i] = Some(k);
        }
        Self {
            nx: grid.nx(),
            interior,
            position,
            grid: *grid,
        }
    }

    fn neighbor(&self, m: &[usize], off: &[i64]) -> Option<usize> {
        let mut target = Vec::with_capacity(m.len());
        for (&c, &o) in m.iter().zip(off) {
            let v = c as i64 + o;
            if v < 0 || v >= self.nx as i64 {
                return None;
            }
            target.push(v as usize);
        }
        self.position[self.grid.index(&target)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn g1(nx: usize) -> SpatialGrid {
        SpatialGrid::new(1, nx)
    }

    #[test]
    fn laplacian_bounds() {
        let spec = OperatorSpec::<f64>::laplacian(1).validate(&g1(33)).unwrap();
        let b = spec.bounds().unwrap();
        assert_eq!((b.lambda_min, b.lambda_max, b.c_bar), (1.0, 1.0, 0.0));
        let spec2 = OperatorSpec::<f64>::laplacian(2)
            .validate(&SpatialGrid::new(2, 9))
            .unwrap();
        assert_eq!(spec2.bounds().unwrap().lambda_min, 1.0);
    }

    #[test]
    fn reaction_term_sets_c_bar() {
        let spec = OperatorSpec::<f64>::with_reaction(1, 3.0)
            .validate(&g1(17))
            .unwrap();
        assert_eq!(spec.bounds().unwrap().c_bar, 3.0);
        let neg = OperatorSpec::<f64>::with_reaction(1, -2.0)
            .validate(&g1(17))
            .unwrap();
        assert_eq!(neg.bounds().unwrap().c_bar, 0.0);
    }

    #[test]
    fn discontinuous_coefficient_bounds_by_scan() {
        let a = vec![ScalarField::Affine {
            inner: Box::new(ScalarField::Step {
                axis: 0,
                at: 0.5,
                below: -1.0,
                above: 1.0,
            }),
            scale: 0.5,
            offset: 1.0,
        }];
        let spec = OperatorSpec::divergence(1, a).validate(&g1(65)).unwrap();
        // pointwise oracle
        let grid = g1(65);
        let vals: Vec<f64> = (0..grid.len())
            .map(|i| {
                let x = grid.coords::<f64>(i)[0];
                1.0 + 0.5 * (x - 0.5).signum() * if x == 0.5 { 0.0 } else { 1.0 }
            })
            .collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let b = spec.bounds().unwrap();
        assert_eq!((b.lambda_min, b.lambda_max), (lo, hi));
        assert_eq!((lo, hi), (0.5, 1.5));
    }

    #[test]
    fn ellipticity_violation_names_point() {
        let a = vec![ScalarField::Sine {
            axis: 0,
            mean: 0.5,
            amplitude: 1.0,
            wavenumber: 1.0,
        }];
        let err = OperatorSpec::divergence(1, a).validate(&g1(9)).unwrap_err();
        match err {
            OperatorError::Ellipticity { point, value } => {
                assert_eq!(point.len(), 1);
                assert!(value <= 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn asymmetry_is_rejected() {
        let one = ScalarField::Constant(1.0);
        let a = vec![one.clone(), ScalarField::Constant(0.2), ScalarField::zero(), one];
        let err = OperatorSpec::non_divergence(2, a, vec![ScalarField::zero(); 2], ScalarField::zero())
            .validate(&SpatialGrid::new(2, 5))
            .unwrap_err();
        assert!(matches!(err, OperatorError::Asymmetric { i: 0, j: 1, .. }));
    }

    #[test]
    fn zero_order_shift() {
        let grid = g1(17);
        let spec = OperatorSpec::<f64>::with_reaction(1, 3.0).validate(&grid).unwrap();
        let shifted = spec.shift_zero_order(3.0).unwrap();
        assert_eq!(shifted.c().as_constant(), Some(0.0));
        assert_eq!(shifted.bounds().unwrap().c_bar, 0.0);
        assert!(matches!(
            spec.shift_zero_order(2.0),
            Err(OperatorError::InsufficientShift { .. })
        ));
        let lap = OperatorSpec::<f64>::laplacian(1).validate(&grid).unwrap();
        assert_eq!(lap.shift_zero_order(0.0).unwrap(), lap);
        assert_eq!(
            OperatorSpec::<f64>::laplacian(1).shift_zero_order(0.0),
            Err(OperatorError::NotValidated)
        );
        let div = OperatorSpec::<f64>::divergence_step(1, 1.0, 10.0, 0.5)
            .validate(&grid)
            .unwrap();
        assert_eq!(div.shift_zero_order(1.0), Err(OperatorError::NotNonDivergence));
    }

    fn sine_error(nx: usize) -> f64 {
        let grid = g1(nx);
        let f = Array1::from_shape_fn(nx, |i| (std::f64::consts::PI * grid.coords::<f64>(i)[0]).sin());
        let out = OperatorSpec::laplacian(1).apply(&grid, f.view()).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        (0..nx)
            .map(|i| (out[i] + pi2 * f[i]).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn laplacian_of_eigenfunction_is_second_order() {
        let coarse = sine_error(33);
        let fine = sine_error(65);
        assert!(coarse < 1e-2, "{coarse}");
        let rate = (coarse / fine).log2();
        assert!((rate - 2.0).abs() < 0.1, "rate {rate}");
    }

    #[test]
    fn zero_field_and_shape_mismatch() {
        let grid = g1(9);
        let spec = OperatorSpec::<f64>::smooth_variable(1, 0.5);
        let z = spec.apply(&grid, Array1::zeros(9).view()).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert_eq!(
            spec.apply(&grid, Array1::zeros(8).view()),
            Err(OperatorError::Shape { expected: 9, got: 8 })
        );
    }

    #[test]
    fn flux_is_conserved_across_interface() {
        // (a u')' = -1 on (0,1), a = 1 | 10 with interface at 1/2.
        let nx = 65;
        let grid = g1(nx);
        let h = 1.0 / (nx - 1) as f64;
        let spec = OperatorSpec::<f64>::divergence_step(1, 1.0, 10.0, 0.5);
        let m = spec.assemble(&grid).unwrap();
        let lu = m.to_tridiagonal().unwrap().factor().unwrap();
        let mut u = Array1::from_elem(nx - 2, -1.0);
        lu.solve_in_place(&mut u);
        let mut full = vec![0.0];
        full.extend(u.iter());
        full.push(0.0);
        let a_node = |i: usize| spec.a(0, 0).eval(&[i as f64 * h]);
        let flux = |i: usize| 0.5 * (a_node(i) + a_node(i + 1)) * (full[i + 1] - full[i]) / h;
        // discrete conservation at every interior node, interface included
        for i in 1..nx - 1 {
            assert_abs_diff_eq!(flux(i) - flux(i - 1), -h, epsilon = 1e-10);
        }
        // exact flux a u' = C - x is continuous; C from zero boundary data
        let c = (0.5 * 0.5 / 2.0 + (1.0 - 0.25) / 20.0) / (0.5 + 0.5 / 10.0);
        let mid = nx / 2;
        let exact = c - (mid as f64 - 0.5) * h;
        assert_abs_diff_eq!(flux(mid - 1), exact, epsilon = 1e-2);
        assert_abs_diff_eq!(flux(mid), exact - h, epsilon = 1e-2);
    }

    #[test]
    fn divergence_and_dissipative_operators_are_negative_semidefinite() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let grid2 = SpatialGrid::new(2, 9);
        let specs = vec![
            (SpatialGrid::new(1, 33), OperatorSpec::<f64>::divergence_step(1, 1.0, 10.0, 0.5)),
            (grid2, OperatorSpec::<f64>::divergence_step(2, 1.0, 10.0, 0.3)),
            (SpatialGrid::new(1, 33), OperatorSpec::<f64>::with_reaction(1, -2.0)),
            (grid2, OperatorSpec::<f64>::laplacian(2)),
        ];
        for (grid, spec) in specs {
            let m = spec.assemble(&grid).unwrap();
            let dense = m.to_dense();
            for i in 0..m.dim() {
                for j in 0..m.dim() {
                    assert_abs_diff_eq!(dense[[i, j]], dense[[j, i]], epsilon = 1e-9);
                }
            }
            for _ in 0..50 {
                let v = Array1::from_shape_fn(m.dim(), |_| rng.random_range(-1.0..1.0));
                assert!(v.dot(&m.matvec(v.view())) <= 1e-9);
            }
        }
    }
}
