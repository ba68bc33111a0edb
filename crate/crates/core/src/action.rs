//! Matrix Lie algebra actions on `R^n`, the blow-up groupoid of cosets
//! `(g exp(V), x)`, and numerical checks of the closedness results.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blowup::{self, BlowupConfig, BlowupFiberReport};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::foliation::{self, BlowupPoint, FoliationModule, Generator};
use crate::grassmann::{self, Subspace};
use crate::holonomy;
use crate::linalg;
use crate::poly::PolyVectorField;

const CLOSURE_TOL: f64 = 1e-10;
const ALGEBRA_TOL: f64 = 1e-8;

/// Outcome of a semi-decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
    Inconclusive,
}

impl Verdict {
    pub fn is_conclusive(self) -> bool {
        self != Verdict::Inconclusive
    }
}

/// A finite-dimensional Lie algebra of matrices acting on `R^n`, either
/// linearly (optionally affinely) or through the flow of a foliation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ActionRepr", into = "ActionRepr")]
pub struct LieAlgebraAction {
    n: usize,
    basis: Vec<DMatrix<f64>>,
    affine: Option<Vec<DVector<f64>>>,
    flow: Option<FoliationModule>,
    /// Group-level matrices: the basis, embedded homogeneously when affine.
    generators: Vec<DMatrix<f64>>,
    structure_constants: Vec<f64>,
    pinv: DMatrix<f64>,
    foliation: FoliationModule,
}

#[derive(Serialize, Deserialize)]
struct ActionRepr {
    n: usize,
    basis: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    affine: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    flow: Option<FoliationModule>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    for row in rows {
        check_dim(c, row.len())?;
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    check_finite(&flat, "matrix")?;
    Ok(DMatrix::from_row_slice(r, c, &flat))
}

impl From<LieAlgebraAction> for ActionRepr {
    fn from(a: LieAlgebraAction) -> Self {
        ActionRepr {
            n: a.n,
            basis: a.basis.iter().map(rows_of).collect(),
            affine: a
                .affine
                .as_ref()
                .map(|bs| bs.iter().map(|b| b.iter().copied().collect()).collect()),
            flow: a.flow,
        }
    }
}

impl TryFrom<ActionRepr> for LieAlgebraAction {
    type Error = Error;

    fn try_from(r: ActionRepr) -> Result<Self> {
        let basis = r
            .basis
            .iter()
            .map(|m| matrix_from_rows(m))
            .collect::<Result<Vec<_>>>()?;
        match r.flow {
            Some(f) => {
                check_dim(r.n, f.ambient_dim())?;
                LieAlgebraAction::with_flow(basis, f)
            }
            None => {
                let affine = r
                    .affine
                    .map(|bs| bs.into_iter().map(DVector::from_vec).collect());
                let a = LieAlgebraAction::linear(basis, affine)?;
                check_dim(r.n, a.n)?;
                Ok(a)
            }
        }
    }
}

fn structure_constants(gens: &[DMatrix<f64>], pinv: &DMatrix<f64>) -> Result<Vec<f64>> {
    let k = gens.len();
    let stacked = linalg::vectorize(gens);
    let mut c = vec![0.0; k * k * k];
    for i in 0..k {
        for j in 0..k {
            let br = &gens[i] * &gens[j] - &gens[j] * &gens[i];
            let v = DVector::from_column_slice(br.as_slice());
            let coords = pinv * &v;
            let resid = (&stacked * &coords - &v).norm();
            if resid > CLOSURE_TOL * (1.0 + v.norm()) {
                return Err(Error::InvalidAlgebra(format!(
                    "bracket of basis elements {i} and {j} leaves the span (residual {resid:.3e})"
                )));
            }
            for l in 0..k {
                c[(i * k + j) * k + l] = coords[l];
            }
        }
    }
    Ok(c)
}

fn pseudo_inverse(gens: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let k = gens.len();
    if k == 0 {
        return Err(Error::InvalidAlgebra("empty basis".into()));
    }
    let stacked = linalg::vectorize(gens);
    let svd = stacked.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if svd.singular_values.len() < k || !(smin > 1e-10 * smax) {
        return Err(Error::InvalidAlgebra("basis is linearly dependent".into()));
    }
    svd.pseudo_inverse(0.0)
        .map_err(|e| Error::InvalidAlgebra(e.to_string()))
}

impl LieAlgebraAction {
    /// `X_i(x) = A_i x + b_i`.
    pub fn linear(basis: Vec<DMatrix<f64>>, affine: Option<Vec<DVector<f64>>>) -> Result<Self> {
        let n = basis.first().map_or(0, |a| a.nrows());
        if n == 0 {
            return Err(Error::InvalidAlgebra("empty basis".into()));
        }
        for a in &basis {
            check_dim(n, a.nrows())?;
            check_dim(n, a.ncols())?;
            check_finite(a.as_slice(), "basis matrix")?;
        }
        if let Some(bs) = &affine {
            check_dim(basis.len(), bs.len())?;
            for b in bs {
                check_dim(n, b.len())?;
                check_finite(b.as_slice(), "affine part")?;
            }
        }
        let generators: Vec<DMatrix<f64>> = match &affine {
            None => basis.clone(),
            Some(bs) => basis
                .iter()
                .zip(bs)
                .map(|(a, b)| {
                    let mut h = DMatrix::zeros(n + 1, n + 1);
                    h.view_mut((0, 0), (n, n)).copy_from(a);
                    h.view_mut((0, n), (n, 1)).copy_from(b);
                    h
                })
                .collect(),
        };
        let fields = basis
            .iter()
            .enumerate()
            .map(|(i, a)| PolyVectorField::affine(a, affine.as_ref().map(|bs| &bs[i])))
            .collect::<Result<Vec<_>>>()?;
        let foliation = FoliationModule::new(n, fields.into_iter().map(Generator::Poly).collect(), 2)?;
        Self::assemble(n, basis, affine, None, generators, foliation)
    }

    /// An algebra acting through the flows of the generators of `f`; the
    /// matrices only model the group law.
    pub fn with_flow(basis: Vec<DMatrix<f64>>, f: FoliationModule) -> Result<Self> {
        check_dim(basis.len(), f.rank())?;
        let d = basis.first().map_or(0, |a| a.nrows());
        for a in &basis {
            check_dim(d, a.nrows())?;
            check_dim(d, a.ncols())?;
        }
        let n = f.ambient_dim();
        Self::assemble(n, basis.clone(), None, Some(f.clone()), basis, f)
    }

    fn assemble(
        n: usize,
        basis: Vec<DMatrix<f64>>,
        affine: Option<Vec<DVector<f64>>>,
        flow: Option<FoliationModule>,
        generators: Vec<DMatrix<f64>>,
        foliation: FoliationModule,
    ) -> Result<Self> {
        let pinv = pseudo_inverse(&generators)?;
        let structure_constants = structure_constants(&generators, &pinv)?;
        Ok(LieAlgebraAction {
            n,
            basis,
            affine,
            flow,
            generators,
            structure_constants,
            pinv,
            foliation,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.generators.len()
    }

    /// Size of the group matrices.
    pub fn group_dim(&self) -> usize {
        self.generators[0].nrows()
    }

    pub fn basis(&self) -> &[DMatrix<f64>] {
        &self.basis
    }

    pub fn generators(&self) -> &[DMatrix<f64>] {
        &self.generators
    }

    pub fn is_flow(&self) -> bool {
        self.flow.is_some()
    }

    /// `c_ij^l` with `[A_i, A_j] = sum_l c_ij^l A_l`.
    pub fn structure_constant(&self, i: usize, j: usize, l: usize) -> f64 {
        let k = self.dim();
        self.structure_constants[(i * k + j) * k + l]
    }

    /// The induced foliation `X_i(x) = A_i x + b_i` (or the flow generators).
    pub fn foliation(&self) -> &FoliationModule {
        &self.foliation
    }

    pub fn element(&self, coords: &DVector<f64>) -> DMatrix<f64> {
        let d = self.group_dim();
        self.generators
            .iter()
            .zip(coords.iter())
            .fold(DMatrix::zeros(d, d), |acc, (g, &c)| acc + g * c)
    }

    /// Least-squares coordinates of a matrix in the basis and the relative residual.
    pub fn coords(&self, m: &DMatrix<f64>) -> (DVector<f64>, f64) {
        let v = DVector::from_column_slice(m.as_slice());
        let c = &self.pinv * &v;
        let resid = (linalg::vectorize(&self.generators) * &c - &v).norm();
        (c, resid / v.norm().max(1e-300))
    }

    pub fn exp(&self, coords: &DVector<f64>) -> DMatrix<f64> {
        linalg::expm(&self.element(coords))
    }

    pub fn identity(&self) -> DMatrix<f64> {
        DMatrix::identity(self.group_dim(), self.group_dim())
    }

    /// `g . x`.
    pub fn act(&self, g: &DMatrix<f64>, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, x.len())?;
        check_dim(self.group_dim(), g.nrows())?;
        if let Some(f) = &self.flow {
            let log = linalg::logm_principal(g)
                .ok_or_else(|| Error::InvalidInput("group element has no principal logarithm".into()))?;
            let (c, resid) = self.coords(&log);
            if resid > ALGEBRA_TOL {
                return Err(Error::NotInAlgebra { residual: resid });
            }
            return holonomy::flow(f, x, c.as_slice());
        }
        let v = DVector::from_column_slice(x);
        if self.affine.is_some() {
            let mut h = DVector::from_element(self.n + 1, 1.0);
            h.rows_mut(0, self.n).copy_from(&v);
            let out = g * h;
            Ok(out.rows(0, self.n).iter().copied().collect())
        } else {
            Ok((g * v).iter().copied().collect())
        }
    }
}

/// `h_x`: kernel of `c -> sum c_i (A_i x + b_i)`.
pub fn isotropy_subalgebra(act: &LieAlgebraAction, x: &[f64], tol: f64) -> Result<Subspace> {
    foliation::isotropy(&act.foliation, x, tol)
}

/// Blow-up fiber of the induced foliation; clusters carry their approach direction.
pub fn blowup_fiber_action(
    act: &LieAlgebraAction,
    x: &[f64],
    cfg: &BlowupConfig,
) -> Result<BlowupFiberReport> {
    let mut report = blowup::sample_fiber(&act.foliation, x, cfg)?;
    // Brackets of the induced fields are minus the algebra brackets, so the
    // exact constants decide the same subalgebra question.
    let residual = subalgebra_residual(act, &report);
    let h = isotropy_subalgebra(act, x, grassmann::DEFAULT_TOL)?;
    let mut containment_ok = true;
    for c in &report.clusters {
        containment_ok &= grassmann::contains(&h, &c.subspace, 1e-6)?;
    }
    report.property_report = Some(blowup::PropertyReport {
        containment_ok,
        subalgebra_residual: residual,
    });
    Ok(report)
}

fn subalgebra_residual(act: &LieAlgebraAction, report: &BlowupFiberReport) -> f64 {
    let mut worst: f64 = 0.0;
    for c in &report.clusters {
        let b = c.subspace.basis();
        for i in 0..b.ncols() {
            for j in (i + 1)..b.ncols() {
                let x = act.element(&b.column(i).into_owned());
                let y = act.element(&b.column(j).into_owned());
                let (coords, _) = act.coords(&(&x * &y - &y * &x));
                worst = worst.max(c.subspace.distance_to_vector(&coords));
            }
        }
    }
    worst
}

/// Matrix of `Ad(g)` in the basis.
pub fn adjoint_matrix(act: &LieAlgebraAction, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(act.group_dim(), g.nrows())?;
    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("group element is singular".into()))?;
    let k = act.dim();
    let mut out = DMatrix::zeros(k, k);
    for (i, a) in act.generators.iter().enumerate() {
        let (c, resid) = act.coords(&(g * a * &g_inv));
        if resid > ALGEBRA_TOL {
            return Err(Error::NotInAlgebra { residual: resid });
        }
        out.set_column(i, &c);
    }
    Ok(out)
}

/// `Ad(g) V`.
pub fn adjoint_transport(act: &LieAlgebraAction, g: &DMatrix<f64>, v: &Subspace) -> Result<Subspace> {
    check_dim(act.dim(), v.ambient_dim())?;
    if v.is_zero() {
        return Ok(v.clone());
    }
    v.map(&adjoint_matrix(act, g)?, 1e-12)
}

/// Representative `(g, V, x)` of the coset class `(g exp(V), x)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupoidElement {
    pub g: DMatrix<f64>,
    pub subspace: Subspace,
    pub base: Vec<f64>,
}

impl GroupoidElement {
    pub fn new(act: &LieAlgebraAction, g: DMatrix<f64>, subspace: Subspace, base: Vec<f64>, tol: f64) -> Result<Self> {
        check_dim(act.group_dim(), g.nrows())?;
        check_dim(act.group_dim(), g.ncols())?;
        let h = isotropy_subalgebra(act, &base, grassmann::DEFAULT_TOL)?;
        if !grassmann::contains(&h, &subspace, tol)? {
            return Err(Error::InvalidInput("subspace is not inside the isotropy at the base".into()));
        }
        Ok(GroupoidElement { g, subspace, base })
    }

    pub fn unit(act: &LieAlgebraAction, subspace: Subspace, base: Vec<f64>) -> Self {
        GroupoidElement {
            g: act.identity(),
            subspace,
            base,
        }
    }
}

pub fn source(gamma: &GroupoidElement) -> BlowupPoint {
    BlowupPoint {
        base: gamma.base.clone(),
        subspace: gamma.subspace.clone(),
        direction: None,
    }
}

pub fn target(act: &LieAlgebraAction, gamma: &GroupoidElement) -> Result<BlowupPoint> {
    Ok(BlowupPoint {
        base: act.act(&gamma.g, &gamma.base)?,
        subspace: adjoint_transport(act, &gamma.g, &gamma.subspace)?,
        direction: None,
    })
}

fn point_gap(a: &BlowupPoint, b: &BlowupPoint) -> Result<(f64, f64)> {
    check_dim(a.base.len(), b.base.len())?;
    let base_gap = a
        .base
        .iter()
        .zip(&b.base)
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok((base_gap, grassmann::distance(&a.subspace, &b.subspace)?))
}

/// `gamma1 · gamma2`, defined when `target(gamma2) = source(gamma1)`.
pub fn compose(act: &LieAlgebraAction, gamma1: &GroupoidElement, gamma2: &GroupoidElement, tol: f64) -> Result<GroupoidElement> {
    let (base_gap, subspace_gap) = point_gap(&target(act, gamma2)?, &source(gamma1))?;
    if base_gap > tol || subspace_gap > tol {
        return Err(Error::NotComposable {
            base_gap,
            subspace_gap,
        });
    }
    Ok(GroupoidElement {
        g: &gamma1.g * &gamma2.g,
        subspace: gamma2.subspace.clone(),
        base: gamma2.base.clone(),
    })
}

pub fn inverse(act: &LieAlgebraAction, gamma: &GroupoidElement) -> Result<GroupoidElement> {
    let t = target(act, gamma)?;
    let g = gamma
        .g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("group element is singular".into()))?;
    Ok(GroupoidElement {
        g,
        subspace: t.subspace,
        base: t.base,
    })
}

fn orthogonal_part(v: &Subspace, c: &DVector<f64>) -> f64 {
    v.distance_to_vector(c)
}

/// Whether `h ∈ exp(V)`, decided through the logarithm when `h` is close
/// enough to the identity that `log h` has norm below `eta2`.
pub fn local_log_membership(act: &LieAlgebraAction, h: &DMatrix<f64>, v: &Subspace, eta2: f64, tol: f64) -> Verdict {
    if h.nrows() != act.group_dim() || v.ambient_dim() != act.dim() {
        return Verdict::Inconclusive;
    }
    let Some(log) = linalg::logm_near_identity(h) else {
        return Verdict::Inconclusive;
    };
    if log.norm() >= eta2 {
        return Verdict::Inconclusive;
    }
    let (c, resid) = act.coords(&log);
    if resid * log.norm() > tol {
        return Verdict::No;
    }
    if orthogonal_part(v, &c) <= tol {
        Verdict::Yes
    } else {
        Verdict::No
    }
}

pub const DEFAULT_ETA2: f64 = 0.5;
const DESCENT_STEPS: usize = 50;
const MAX_STEP: f64 = 1.0;

/// Whether `g1 exp(V) = g2 exp(V)` over the same base point.
pub fn coset_equal(act: &LieAlgebraAction, gamma1: &GroupoidElement, gamma2: &GroupoidElement, tol: f64) -> Result<Verdict> {
    let (base_gap, subspace_gap) = point_gap(&source(gamma1), &source(gamma2))?;
    if base_gap > tol || subspace_gap > tol {
        return Ok(Verdict::No);
    }
    let g1_inv = gamma1
        .g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("group element is singular".into()))?;
    Ok(coset_contains(act, g1_inv * &gamma2.g, &gamma1.subspace, tol))
}

/// Semi-decides `h ∈ exp(V)` by projected descent toward the identity.
pub fn coset_contains(act: &LieAlgebraAction, mut h: DMatrix<f64>, v: &Subspace, tol: f64) -> Verdict {
    for _ in 0..DESCENT_STEPS {
        if linalg::dist_to_identity(&h) <= tol {
            return Verdict::Yes;
        }
        let in_chart = linalg::dist_to_identity(&h) < linalg::LOG_CHART_RADIUS;
        let proposal = if in_chart {
            match local_log_membership(act, &h, v, DEFAULT_ETA2, tol) {
                Verdict::No => return Verdict::No,
                Verdict::Yes | Verdict::Inconclusive => linalg::logm_near_identity(&h),
            }
        } else {
            linalg::logm_principal(&h)
        };
        let proposal = proposal.unwrap_or_else(|| &h - act.identity());
        let (c, _) = act.coords(&proposal);
        let mut step = v.basis() * (v.basis().transpose() * &c);
        let norm = step.norm();
        if norm <= tol * 1e-3 {
            return Verdict::Inconclusive;
        }
        if norm > MAX_STEP {
            step *= MAX_STEP / norm;
        }
        h = act.exp(&(-step)) * h;
    }
    if linalg::dist_to_identity(&h) <= tol {
        Verdict::Yes
    } else {
        Verdict::Inconclusive
    }
}

fn coset_cloud(act: &LieAlgebraAction, gamma: &GroupoidElement, samples: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut rng = linalg::rng_for(seed, 0xC0);
    let dim = gamma.subspace.dim();
    let mut cloud = vec![gamma.g.clone()];
    if dim == 0 {
        return cloud;
    }
    for _ in 1..samples.max(1) {
        let u = linalg::random_unit(dim, &mut rng) * rng.random_range(0.0..1.0);
        let w = gamma.subspace.basis() * u;
        cloud.push(&gamma.g * act.exp(&w));
    }
    cloud
}

/// `d_M + d_g + d_G`, with `d_G` estimated from sampled coset points
/// `g exp(w)`, `|w| <= 1`. Larger sample counts refine the same sample
/// sequence, so the estimate is non-increasing in `samples`.
pub fn hblup_metric(act: &LieAlgebraAction, gamma1: &GroupoidElement, gamma2: &GroupoidElement, samples: usize, seed: u64) -> Result<f64> {
    let (d_m, d_g) = point_gap(&source(gamma1), &source(gamma2))?;
    let a = coset_cloud(act, gamma1, samples, seed);
    let b = coset_cloud(act, gamma2, samples, seed.wrapping_add(1));
    let d_group = a
        .iter()
        .flat_map(|p| b.iter().map(move |q| (p - q).norm()))
        .fold(f64::INFINITY, f64::min);
    Ok(d_m + d_g + d_group)
}

/// Compact search region: a box, optionally cut to a spherical shell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default)]
    pub r_min: Option<f64>,
    #[serde(default)]
    pub r_max: Option<f64>,
}

impl Region {
    pub fn grid(&self, per_axis: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.lo.len();
        check_dim(n, self.hi.len())?;
        if per_axis == 0 {
            return Err(Error::InvalidInput("grid needs at least one point per axis".into()));
        }
        let mut pts: Vec<Vec<f64>> = vec![vec![]];
        for i in 0..n {
            let (a, b) = (self.lo[i], self.hi[i]);
            let axis: Vec<f64> = if per_axis == 1 {
                vec![0.5 * (a + b)]
            } else {
                (0..per_axis)
                    .map(|j| a + (b - a) * j as f64 / (per_axis - 1) as f64)
                    .collect()
            };
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        Ok(pts
            .into_iter()
            .filter(|p| {
                let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                self.r_min.is_none_or(|m| r >= m) && self.r_max.is_none_or(|m| r <= m)
            })
            .collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EtaConfig {
    /// Grid points per axis of the region.
    pub grid: usize,
    pub t_max: f64,
    /// Spacing of the scan in `|Y|`.
    pub dt: f64,
    pub return_tol: f64,
    /// Number of unit directions in the algebra (ignored for `k <= 2`).
    pub directions: usize,
    pub seed: u64,
}

impl Default for EtaConfig {
    fn default() -> Self {
        EtaConfig {
            grid: 5,
            t_max: 10.0,
            dt: 0.05,
            return_tol: 1e-7,
            directions: 4000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Witness {
    pub y: Vec<f64>,
    /// Algebra element `Y` in basis coordinates.
    pub element: Vec<f64>,
    pub norm: f64,
    pub residual: f64,
    /// Distance of the unit direction of `Y` to `h_y`.
    pub isotropy_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EtaReport {
    pub eta_hat: f64,
    pub grid_spacing: f64,
    pub witnesses: Vec<Witness>,
    /// Every refined return `exp(Y) y ≈ y`, witnesses included.
    pub near_returns: Vec<Witness>,
}

/// Unit directions in `R^k`: `{1}`, an even circle, a Fibonacci sphere, or
/// seeded Gaussian draws.
pub fn sphere_directions(k: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    match k {
        1 => vec![DVector::from_element(1, 1.0)],
        2 => {
            let m = count.clamp(8, 720);
            (0..m)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / m as f64;
                    DVector::from_column_slice(&[a.cos(), a.sin()])
                })
                .collect()
        }
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * i as f64;
                    DVector::from_column_slice(&[r * a.cos(), r * a.sin(), z])
                })
                .collect()
        }
        _ => {
            let mut rng = linalg::rng_for(seed, 0xE7);
            (0..count).map(|_| linalg::random_unit(k, &mut rng)).collect()
        }
    }
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

pub(crate) struct Candidate {
    pub t: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Interior local minima of a sampled return profile that could hide an
/// exact return within one grid cell.
pub(crate) fn scan_candidates(r: &[f64], dt: f64, speed: f64, return_tol: f64) -> Vec<Candidate> {
    let bound = 1.5 * dt * speed + return_tol;
    (1..r.len().saturating_sub(1))
        .filter(|&j| r[j] <= r[j - 1] && r[j] <= r[j + 1] && r[j] <= bound)
        .map(|j| Candidate {
            t: j as f64 * dt,
            lo: (j - 1) as f64 * dt,
            hi: (j + 1) as f64 * dt,
        })
        .collect()
}

/// Refines candidates in ascending order of `t` and stops once a witness
/// is known that is shorter than the remaining candidates.
pub(crate) fn refine_candidates<F>(
    mut cands: Vec<(usize, usize, Candidate)>,
    residual: F,
    isotropy_gap: &dyn Fn(usize, usize) -> f64,
    return_tol: f64,
) -> (Vec<(usize, usize, f64, f64)>, Vec<(usize, usize, f64, f64)>)
where
    F: Fn(usize, usize, f64) -> f64 + Sync,
{
    cands.sort_by(|a, b| a.2.t.total_cmp(&b.2.t).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut witnesses = Vec::new();
    let mut near = Vec::new();
    let mut best = f64::INFINITY;
    for chunk in cands.chunks(64) {
        if chunk[0].2.lo > best {
            break;
        }
        let refined: Vec<(usize, usize, f64, f64)> = chunk
            .par_iter()
            .map(|(y, d, c)| {
                let (t, r) = golden_min(|t| residual(*y, *d, t), c.lo, c.hi, 1e-13 * c.hi.max(1.0));
                (*y, *d, t, r)
            })
            .collect();
        for (y, d, t, r) in refined {
            if r > return_tol {
                continue;
            }
            near.push((y, d, t, r));
            if isotropy_gap(y, d) > 10.0 * return_tol && t < best {
                best = best.min(t);
                witnesses.push((y, d, t, r));
            }
        }
    }
    (witnesses, near)
}

/// Lower estimate of the periodic bounding constant on a compact region.
pub fn eta_estimate(act: &LieAlgebraAction, region: &Region, cfg: &EtaConfig) -> Result<EtaReport> {
    check_dim(act.n, region.lo.len())?;
    if !(cfg.dt > 0.0 && cfg.t_max > cfg.dt) {
        return Err(Error::InvalidInput("need 0 < dt < t_max".into()));
    }
    let points = region.grid(cfg.grid)?;
    let dirs = sphere_directions(act.dim(), cfg.directions, cfg.seed);
    let steps = (cfg.t_max / cfg.dt).floor() as usize;
    let tol = grassmann::DEFAULT_TOL;
    let isotropies: Vec<Subspace> = points
        .iter()
        .map(|y| isotropy_subalgebra(act, y, tol))
        .collect::<Result<_>>()?;
    let gap = |y: usize, d: usize| isotropies[y].distance_to_vector(&dirs[d]);

    let per_dir: Vec<Vec<(usize, usize, Candidate)>> = dirs
        .par_iter()
        .enumerate()
        .map(|(di, d)| -> Result<Vec<(usize, usize, Candidate)>> {
            let active: Vec<usize> = (0..points.len())
                .filter(|&y| gap(y, di) > 10.0 * cfg.return_tol)
                .collect();
            if active.is_empty() {
                return Ok(vec![]);
            }
            let profiles = return_profiles(act, &points, &active, d, cfg.dt, steps)?;
            let mut out = Vec::new();
            for (slot, &y) in active.iter().enumerate() {
                let speed = act.foliation.anchor(&points[y], d).norm();
                for c in scan_candidates(&profiles[slot], cfg.dt, speed, cfg.return_tol) {
                    out.push((y, di, c));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let cands: Vec<(usize, usize, Candidate)> = per_dir.into_iter().flatten().collect();

    let residual = |y: usize, d: usize, t: f64| -> f64 {
        let g = act.exp(&(&dirs[d] * t));
        match act.act(&g, &points[y]) {
            Ok(z) => z.iter().zip(&points[y]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
            Err(_) => f64::INFINITY,
        }
    };
    let (wit, near) = refine_candidates(cands, residual, &gap, cfg.return_tol);
    let to_witness = |(y, d, t, r): (usize, usize, f64, f64)| Witness {
        y: points[y].clone(),
        element: (&dirs[d] * t).iter().copied().collect(),
        norm: t,
        residual: r,
        isotropy_gap: gap(y, d),
    };
    let witnesses: Vec<Witness> = wit.into_iter().map(to_witness).collect();
    let eta_hat = witnesses.iter().map(|w| w.norm).fold(cfg.t_max, f64::min);
    Ok(EtaReport {
        eta_hat,
        grid_spacing: cfg.dt,
        witnesses,
        near_returns: near.into_iter().map(to_witness).collect(),
    })
}

/// `|exp(j dt D) y - y|` for `j = 0..=steps` at each active point.
fn return_profiles(
    act: &LieAlgebraAction,
    points: &[Vec<f64>],
    active: &[usize],
    d: &DVector<f64>,
    dt: f64,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    if let Some(f) = &act.flow {
        return active
            .iter()
            .map(|&y| {
                let path = holonomy::flow_samples(f, &points[y], d.as_slice(), dt, steps)?;
                Ok(path
                    .iter()
                    .map(|z| z.iter().zip(&points[y]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                    .collect())
            })
            .collect();
    }
    let step = act.exp(&(d * dt));
    let mut m = act.identity();
    let mut out = vec![Vec::with_capacity(steps + 1); active.len()];
    for _ in 0..=steps {
        for (slot, &y) in active.iter().enumerate() {
            let z = act.act(&m, &points[y])?;
            out[slot].push(z.iter().zip(&points[y]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
        }
        m = &step * m;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub radius: f64,
    pub samples: usize,
    pub tol: f64,
    /// Metric threshold below which an inconclusive pair counts as a collision.
    pub separation: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            radius: 0.1,
            samples: 16,
            tol: 1e-8,
            separation: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbeddingReport {
    pub passed: bool,
    pub pairs: usize,
    pub collisions: usize,
    pub inconclusive: usize,
}

/// Checks that `X -> exp(X) exp(V)` is injective on a small ball of the
/// transversal `V^⊥`, at `p` and at the supplied nearby blow-up points.
pub fn embedding_check(
    act: &LieAlgebraAction,
    p: &BlowupPoint,
    nearby: &[BlowupPoint],
    cfg: &EmbeddingConfig,
) -> Result<EmbeddingReport> {
    let mut report = EmbeddingReport {
        passed: true,
        pairs: 0,
        collisions: 0,
        inconclusive: 0,
    };
    for (idx, q) in std::iter::once(p).chain(nearby).enumerate() {
        check_dim(act.dim(), q.subspace.ambient_dim())?;
        let s = grassmann::annihilator(&q.subspace);
        if s.is_zero() {
            continue;
        }
        let mut rng = linalg::rng_for(cfg.seed, 0xEB + idx as u64);
        let xs: Vec<DVector<f64>> = (0..cfg.samples)
            .map(|_| s.basis() * linalg::uniform_in_ball(s.dim(), cfg.radius, &mut rng))
            .collect();
        let elems: Vec<GroupoidElement> = xs
            .iter()
            .map(|x| GroupoidElement {
                g: act.exp(x),
                subspace: q.subspace.clone(),
                base: q.base.clone(),
            })
            .collect();
        for i in 0..elems.len() {
            for j in (i + 1)..elems.len() {
                report.pairs += 1;
                match coset_equal(act, &elems[i], &elems[j], cfg.tol)? {
                    Verdict::No => {}
                    Verdict::Yes => report.collisions += 1,
                    Verdict::Inconclusive => {
                        if hblup_metric(act, &elems[i], &elems[j], 64, cfg.seed)? < cfg.separation {
                            report.collisions += 1;
                        } else {
                            report.inconclusive += 1;
                        }
                    }
                }
            }
        }
    }
    report.passed = report.collisions == 0;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClosedSubgroupConfig {
    pub words: usize,
    pub max_word_len: usize,
    /// Scale of the Gaussian letters `w_i ∈ V`.
    pub scale: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for ClosedSubgroupConfig {
    fn default() -> Self {
        ClosedSubgroupConfig {
            words: 2000,
            max_word_len: 3,
            scale: 3.0,
            tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosedSubgroupReport {
    pub passed: bool,
    pub words: usize,
    pub in_chart: usize,
    pub violations: usize,
    /// Largest component of `log h` orthogonal to `V` among violations.
    pub worst_violation: f64,
}

/// Samples words in `exp(V)` and checks every word that returns to the log
/// chart has its logarithm in `V`.
pub fn closed_subgroup_check(act: &LieAlgebraAction, v: &Subspace, cfg: &ClosedSubgroupConfig) -> Result<ClosedSubgroupReport> {
    check_dim(act.dim(), v.ambient_dim())?;
    let outcomes: Vec<(bool, Option<f64>)> = (0..cfg.words)
        .into_par_iter()
        .map(|w| {
            let mut rng = linalg::rng_for(cfg.seed, 0x5000 + w as u64);
            let len = rng.random_range(1..=cfg.max_word_len.max(1));
            let mut h = act.identity();
            for _ in 0..len {
                if v.is_zero() {
                    break;
                }
                let u: DVector<f64> = linalg::random_unit(v.dim(), &mut rng) * (rng.random_range(0.0..1.0) * cfg.scale);
                h *= act.exp(&(v.basis() * u));
            }
            if linalg::dist_to_identity(&h) >= linalg::LOG_CHART_RADIUS {
                return (false, None);
            }
            match local_log_membership(act, &h, v, DEFAULT_ETA2, cfg.tol) {
                Verdict::No => {
                    let log = linalg::logm_near_identity(&h).expect("inside chart");
                    let (c, _) = act.coords(&log);
                    (true, Some(orthogonal_part(v, &c)))
                }
                _ => (true, None),
            }
        })
        .collect();
    let in_chart = outcomes.iter().filter(|o| o.0).count();
    let violations: Vec<f64> = outcomes.iter().filter_map(|o| o.1).collect();
    Ok(ClosedSubgroupReport {
        passed: violations.is_empty(),
        words: cfg.words,
        in_chart,
        violations: violations.len(),
        worst_violation: violations.iter().copied().fold(0.0, f64::max),
    })
}
