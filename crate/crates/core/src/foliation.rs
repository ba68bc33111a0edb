//! Singular foliations given by finitely many generators on `R^n`: fibers,
//! isotropy, structure functions and pullbacks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::grassmann::{self, Subspace};
use crate::linalg;
use crate::poly::{self, PolyVectorField};

/// Standard smooth bump `exp(-1/(1-s^2))` on `(-1, 1)`, zero elsewhere.
pub fn bump(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (-1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

pub fn bump_derivative(s: f64) -> f64 {
    if s.abs() < 1.0 {
        let b = bump(s);
        if b == 0.0 {
            return 0.0;
        }
        let q = 1.0 - s * s;
        b * (-2.0 * s / (q * q))
    } else {
        0.0
    }
}

/// A generator of the module: either a polynomial field or the bump field
/// `rho(x_axis) d/dx_axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Generator {
    Poly(PolyVectorField),
    Bump { ambient: usize, bump_axis: usize },
}

impl Generator {
    pub fn ambient_dim(&self) -> usize {
        match self {
            Generator::Poly(p) => p.ambient_dim(),
            Generator::Bump { ambient, .. } => *ambient,
        }
    }

    pub fn eval(&self, y: &[f64]) -> DVector<f64> {
        match self {
            Generator::Poly(p) => p.eval(y),
            Generator::Bump { ambient, bump_axis } => {
                let mut v = DVector::zeros(*ambient);
                v[*bump_axis] = bump(y[*bump_axis]);
                v
            }
        }
    }

    pub fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        match self {
            Generator::Poly(p) => p.jacobian(y),
            Generator::Bump { ambient, bump_axis } => {
                let mut j = DMatrix::zeros(*ambient, *ambient);
                j[(*bump_axis, *bump_axis)] = bump_derivative(y[*bump_axis]);
                j
            }
        }
    }

    fn extend(&self, extra: usize) -> Generator {
        match self {
            Generator::Poly(p) => Generator::Poly(p.extend(extra)),
            Generator::Bump { ambient, bump_axis } => Generator::Bump {
                ambient: ambient + extra,
                bump_axis: *bump_axis,
            },
        }
    }
}

/// Pointwise bracket `[X, Y](y) = DY(y) X(y) - DX(y) Y(y)`.
pub fn bracket_at(x: &Generator, y: &Generator, at: &[f64]) -> DVector<f64> {
    y.jacobian(at) * x.eval(at) - x.jacobian(at) * y.eval(at)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModuleRepr", into = "ModuleRepr")]
pub struct FoliationModule {
    n: usize,
    generators: Vec<Generator>,
    coeff_degree: usize,
}

#[derive(Serialize, Deserialize)]
struct ModuleRepr {
    n: usize,
    generators: Vec<Generator>,
    #[serde(default = "default_coeff_degree")]
    coeff_degree: usize,
}

fn default_coeff_degree() -> usize {
    2
}

impl From<FoliationModule> for ModuleRepr {
    fn from(f: FoliationModule) -> Self {
        ModuleRepr {
            n: f.n,
            generators: f.generators,
            coeff_degree: f.coeff_degree,
        }
    }
}

impl TryFrom<ModuleRepr> for FoliationModule {
    type Error = Error;

    fn try_from(r: ModuleRepr) -> Result<Self> {
        FoliationModule::new(r.n, r.generators, r.coeff_degree)
    }
}

impl FoliationModule {
    pub fn new(n: usize, generators: Vec<Generator>, coeff_degree: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("ambient dimension must be positive".into()));
        }
        if generators.is_empty() {
            return Err(Error::InvalidInput("a foliation needs at least one generator".into()));
        }
        for g in &generators {
            check_dim(n, g.ambient_dim())?;
            if let Generator::Bump { bump_axis, .. } = g {
                if *bump_axis >= n {
                    return Err(Error::InvalidInput(format!("bump axis {bump_axis} out of range")));
                }
            }
        }
        Ok(FoliationModule {
            n,
            generators,
            coeff_degree,
        })
    }

    pub fn from_fields(fields: Vec<PolyVectorField>) -> Result<Self> {
        let n = fields.first().map_or(0, |f| f.ambient_dim());
        Self::new(n, fields.into_iter().map(Generator::Poly).collect(), 2)
    }

    pub fn with_coeff_degree(mut self, d: usize) -> Self {
        self.coeff_degree = d;
        self
    }

    pub fn ambient_dim(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.generators.len()
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn coeff_degree(&self) -> usize {
        self.coeff_degree
    }

    pub fn is_polynomial(&self) -> bool {
        self.generators.iter().all(|g| matches!(g, Generator::Poly(_)))
    }

    /// `sum_i c_i X_i(y)`.
    pub fn anchor(&self, y: &[f64], c: &DVector<f64>) -> DVector<f64> {
        eval_matrix(self, y) * c
    }
}

/// The `n x k` matrix whose columns are the generators evaluated at `y`.
pub fn eval_matrix(f: &FoliationModule, y: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(f.n, f.rank());
    for (i, g) in f.generators.iter().enumerate() {
        m.set_column(i, &g.eval(y));
    }
    m
}

fn check_point(f: &FoliationModule, x: &[f64]) -> Result<()> {
    check_dim(f.n, x.len())?;
    check_finite(x, "point")
}

/// Rescales every non-zero column to unit max-norm. Generators of very
/// different size (a flat bump next to a coordinate field) then compete
/// fairly in the relative rank cut, while `ker M = D ker(M D)` keeps the
/// kernel exact. Returns the column norms (1 for zero columns).
fn equilibrate(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let norms = DVector::from_iterator(
        m.ncols(),
        m.column_iter().map(|c| {
            let n = c.amax();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        }),
    );
    let mut scaled = m.clone();
    for (j, mut c) in scaled.column_iter_mut().enumerate() {
        c /= norms[j];
    }
    (scaled, norms)
}

/// `D y` with `D = diag(1 / norms)`, rescaled to unit max-norm in log space
/// so subnormal norms cannot overflow.
fn unscale(y: &DVector<f64>, norms: &DVector<f64>) -> DVector<f64> {
    let logs: Vec<f64> = y
        .iter()
        .zip(norms.iter())
        .map(|(v, n)| if *v == 0.0 { f64::NEG_INFINITY } else { v.abs().ln() - n.ln() })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    DVector::from_iterator(
        y.len(),
        y.iter().zip(&logs).map(|(v, l)| if *v == 0.0 { 0.0 } else { v.signum() * (l - top).exp() }),
    )
}

/// Kernel of the evaluation at `x`, in generator coordinates.
pub fn isotropy(f: &FoliationModule, x: &[f64], tol: f64) -> Result<Subspace> {
    check_point(f, x)?;
    evaluation_kernel(&eval_matrix(f, x), tol)
}

/// Kernel of an evaluation matrix with rank decided on equilibrated columns.
pub fn evaluation_kernel(m: &DMatrix<f64>, tol: f64) -> Result<Subspace> {
    let (scaled, norms) = equilibrate(m);
    let k = grassmann::kernel(&scaled, tol)?;
    if k.is_zero() {
        return Ok(k);
    }
    let cols: Vec<DVector<f64>> = k.basis().column_iter().map(|c| unscale(&c.into_owned(), &norms)).collect();
    grassmann::orthonormalize(&DMatrix::from_columns(&cols), 1e-12)
}

/// Span of the generator values at `x`.
pub fn tangent_fiber(f: &FoliationModule, x: &[f64], tol: f64) -> Result<Subspace> {
    check_point(f, x)?;
    grassmann::orthonormalize(&equilibrate(&eval_matrix(f, x)).0, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegularReport {
    pub is_regular: bool,
    pub dim_f: usize,
    pub dim_h: usize,
}

/// Samples the ball `B(x, radius)` and reports whether the leaf dimension is
/// constant there.
pub fn regular_test(
    f: &FoliationModule,
    x: &[f64],
    radius: f64,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<RegularReport> {
    check_point(f, x)?;
    if !(radius > 0.0) || samples < 8 {
        return Err(Error::InvalidInput("regular_test needs radius > 0 and samples >= 8".into()));
    }
    let dim_f = tangent_fiber(f, x, tol)?.dim();
    let dim_h = f.rank() - dim_f;
    let mut rng = linalg::rng_for(seed, 0);
    let centre = DVector::from_column_slice(x);
    let mut is_regular = true;
    for _ in 0..samples {
        let y = &centre + linalg::uniform_in_ball(f.n, radius, &mut rng);
        if tangent_fiber(f, y.as_slice(), tol)?.dim() != dim_f {
            is_regular = false;
            break;
        }
    }
    Ok(RegularReport {
        is_regular,
        dim_f,
        dim_h,
    })
}

/// Exact bracket of two polynomial fields.
pub fn bracket(x: &PolyVectorField, y: &PolyVectorField) -> Result<PolyVectorField> {
    poly::bracket(x, y)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CollocationConfig {
    /// Ansatz degree; the module's declared degree when absent.
    pub degree: Option<usize>,
    /// Number of sample points; `4 * binom(n + D, D) * k` when absent.
    pub samples: Option<usize>,
    pub radius: f64,
    pub seed: u64,
}

impl Default for CollocationConfig {
    fn default() -> Self {
        CollocationConfig {
            degree: None,
            samples: None,
            radius: 0.05,
            seed: 0,
        }
    }
}

/// Structure functions `f[i][j][l]` at a point, with `[X_i, X_j] = sum_l f_ij^l X_l`.
#[derive(Debug, Clone, Serialize)]
pub struct StructureFunctions {
    pub k: usize,
    pub f: Vec<f64>,
    pub residual: f64,
}

impl StructureFunctions {
    pub fn get(&self, i: usize, j: usize, l: usize) -> f64 {
        self.f[(i * self.k + j) * self.k + l]
    }

    /// `[a, b]` for coefficient vectors in generator coordinates.
    pub fn bracket(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let k = self.k;
        DVector::from_fn(k, |l, _| {
            let mut s = 0.0;
            for i in 0..k {
                for j in 0..k {
                    s += a[i] * b[j] * self.get(i, j, l);
                }
            }
            s
        })
    }
}

/// Exponent vectors of total degree at most `d` in `n` variables, constant first.
pub(crate) fn monomials(n: usize, d: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|e: Vec<u32>| {
                let used: u32 = e.iter().sum();
                (0..=(d as u32 - used)).map(move |k| {
                    let mut e2 = e.clone();
                    e2.push(k);
                    e2
                })
            })
            .collect();
    }
    out.sort_by_key(|e| (e.iter().sum::<u32>(), std::cmp::Reverse(e.clone())));
    out
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn monomial_values(exps: &[Vec<u32>], u: &[f64]) -> Vec<f64> {
    exps.iter()
        .map(|e| e.iter().zip(u).map(|(&k, &ui)| ui.powi(k as i32)).product())
        .collect()
}

/// Fits `targets(y) = sum_l g_l(y) X_l(y)` near `x` with polynomial
/// coefficients `g_l` of the given degree, returning the values `g_l(x)` for
/// every target column together with the worst relative residual.
pub(crate) fn collocate<F>(
    f: &FoliationModule,
    x: &[f64],
    degree: usize,
    samples: usize,
    radius: f64,
    seed: u64,
    targets: F,
    n_targets: usize,
) -> Result<(DMatrix<f64>, f64)>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>>,
{
    let (n, k) = (f.n, f.rank());
    let exps = monomials(n, degree);
    let m = exps.len();
    let mut rng = linalg::rng_for(seed, 1);
    let centre = DVector::from_column_slice(x);
    let mut a = DMatrix::zeros(samples * n, k * m);
    let mut b = DMatrix::zeros(samples * n, n_targets);
    let mut scale: f64 = 0.0;
    for s in 0..samples {
        let u = linalg::uniform_in_ball(n, 1.0, &mut rng);
        let y = &centre + &u * radius;
        let phi = monomial_values(&exps, u.as_slice());
        let ev = eval_matrix(f, y.as_slice());
        let t = targets(y.as_slice())?;
        check_finite(t.as_slice(), "collocation target")?;
        scale = scale.max(ev.norm()).max(t.column_iter().map(|c| c.norm()).fold(0.0, f64::max));
        for l in 0..k {
            for (al, &p) in phi.iter().enumerate() {
                for r in 0..n {
                    a[(s * n + r, l * m + al)] = ev[(r, l)] * p;
                }
            }
        }
        b.view_mut((s * n, 0), (n, n_targets)).copy_from(&t);
    }
    let sol = linalg::lstsq(&a, &b, 1e-11);
    let fitted = &a * &sol;
    let mut residual: f64 = 0.0;
    if scale > 0.0 {
        for c in 0..n_targets {
            residual = residual.max((fitted.column(c) - b.column(c)).amax() / scale);
        }
    }
    let mut values = DMatrix::zeros(k, n_targets);
    for c in 0..n_targets {
        for l in 0..k {
            values[(l, c)] = sol[(l * m, c)];
        }
    }
    Ok((values, residual))
}

/// Structure functions at `x` by collocation least squares near `x`.
pub fn structure_functions_at(
    f: &FoliationModule,
    x: &[f64],
    cfg: &CollocationConfig,
    tol: f64,
) -> Result<StructureFunctions> {
    check_point(f, x)?;
    let (n, k) = (f.n, f.rank());
    let degree = cfg.degree.unwrap_or(f.coeff_degree);
    let samples = cfg
        .samples
        .unwrap_or(4 * binomial(n + degree, degree) * k);
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
        .collect();
    let mut out = vec![0.0; k * k * k];
    if pairs.is_empty() {
        return Ok(StructureFunctions {
            k,
            f: out,
            residual: 0.0,
        });
    }
    let gens = &f.generators;
    let (values, residual) = collocate(
        f,
        x,
        degree,
        samples,
        cfg.radius,
        cfg.seed,
        |y| {
            let mut t = DMatrix::zeros(n, pairs.len());
            for (c, &(i, j)) in pairs.iter().enumerate() {
                t.set_column(c, &bracket_at(&gens[i], &gens[j], y));
            }
            Ok(t)
        },
        pairs.len(),
    )?;
    if residual > tol {
        return Err(Error::NotBracketClosed { residual });
    }
    for (c, &(i, j)) in pairs.iter().enumerate() {
        for l in 0..k {
            out[(i * k + j) * k + l] = values[(l, c)];
            out[(j * k + i) * k + l] = -values[(l, c)];
        }
    }
    Ok(StructureFunctions { k, f: out, residual })
}

/// `F` pulled back along the projection `R^(n+m) -> R^n`: the constant
/// extensions of the generators followed by the `m` new coordinate fields.
pub fn pullback_foliation(f: &FoliationModule, m: usize) -> Result<FoliationModule> {
    if m == 0 {
        return Err(Error::InvalidInput("pullback needs m >= 1".into()));
    }
    let total = f.n + m;
    let mut gens: Vec<Generator> = f.generators.iter().map(|g| g.extend(m)).collect();
    gens.extend((f.n..total).map(|i| Generator::Poly(PolyVectorField::coordinate(total, i))));
    FoliationModule::new(total, gens, f.coeff_degree)
}

/// A point `(V, x)` of the blow-up space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupPoint {
    pub base: Vec<f64>,
    pub subspace: Subspace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
}

impl BlowupPoint {
    /// Validates `V` against the isotropy at the base point.
    pub fn new(f: &FoliationModule, base: Vec<f64>, subspace: Subspace, tol: f64) -> Result<Self> {
        check_dim(f.rank(), subspace.ambient_dim())?;
        let h = isotropy(f, &base, grassmann::DEFAULT_TOL)?;
        if !grassmann::contains(&h, &subspace, tol)? {
            return Err(Error::InvalidInput(
                "subspace is not contained in the isotropy at the base point".into(),
            ));
        }
        Ok(BlowupPoint {
            base,
            subspace,
            direction: None,
        })
    }
}
