//! Path-holonomy bi-submersion charts `(y, t) -> (y, exp_{sum t_i X_i}(y))`:
//! flows, variational Jacobians, leaf distributions and leaf traces.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{self, EtaConfig, EtaReport, Region, Witness};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::foliation::{self, eval_matrix, BlowupPoint, FoliationModule};
use crate::grassmann::{self, Subspace};

/// Norm beyond which an integration is declared to have escaped.
pub const ESCAPE_NORM: f64 = 1e8;
const FLOW_TOL: f64 = 1e-10;
const MIN_STEPS: usize = 8;
const MAX_STEPS: usize = 1 << 18;

fn field(f: &FoliationModule, z: &DVector<f64>, t: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(f.ambient_dim());
    for (g, &ti) in f.generators().iter().zip(t.iter()) {
        if ti != 0.0 {
            out += g.eval(z.as_slice()) * ti;
        }
    }
    out
}

fn field_jacobian(f: &FoliationModule, z: &DVector<f64>, t: &DVector<f64>) -> DMatrix<f64> {
    let n = f.ambient_dim();
    let mut out = DMatrix::zeros(n, n);
    for (g, &ti) in f.generators().iter().zip(t.iter()) {
        if ti != 0.0 {
            out += g.jacobian(z.as_slice()) * ti;
        }
    }
    out
}

fn check_escape(z: &DVector<f64>) -> Result<()> {
    let norm = z.norm();
    if !norm.is_finite() || norm > ESCAPE_NORM {
        return Err(Error::FlowEscape { norm });
    }
    Ok(())
}

fn check_args(f: &FoliationModule, y: &[f64], t: &[f64]) -> Result<()> {
    check_dim(f.ambient_dim(), y.len())?;
    check_dim(f.rank(), t.len())?;
    check_finite(y, "point")?;
    check_finite(t, "time")
}

/// RK4 with a fixed number of steps over unit time.
pub fn flow_fixed(f: &FoliationModule, y: &[f64], t: &[f64], steps: usize) -> Result<Vec<f64>> {
    check_args(f, y, t)?;
    let tv = DVector::from_column_slice(t);
    let z = rk4(f, DVector::from_column_slice(y), &tv, 1.0, steps.max(1))?;
    Ok(z.iter().copied().collect())
}

fn rk4(f: &FoliationModule, mut z: DVector<f64>, t: &DVector<f64>, time: f64, steps: usize) -> Result<DVector<f64>> {
    let h = time / steps as f64;
    for _ in 0..steps {
        let k1 = field(f, &z, t);
        let k2 = field(f, &(&z + &k1 * (h / 2.0)), t);
        let k3 = field(f, &(&z + &k2 * (h / 2.0)), t);
        let k4 = field(f, &(&z + &k3 * h), t);
        z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        check_escape(&z)?;
    }
    Ok(z)
}

/// Endpoint `r(y, t)` of `z' = sum t_i X_i(z)`, `z(0) = y`, at unit time.
/// Step counts double until successive endpoints agree to 1e-10.
pub fn flow(f: &FoliationModule, y: &[f64], t: &[f64]) -> Result<Vec<f64>> {
    check_args(f, y, t)?;
    let tv = DVector::from_column_slice(t);
    let y0 = DVector::from_column_slice(y);
    if tv.iter().all(|&v| v == 0.0) {
        return Ok(y.to_vec());
    }
    let mut steps = MIN_STEPS;
    let mut prev = rk4(f, y0.clone(), &tv, 1.0, steps)?;
    while steps < MAX_STEPS {
        steps *= 2;
        let next = rk4(f, y0.clone(), &tv, 1.0, steps)?;
        let diff = (&next - &prev).amax();
        prev = next;
        if diff < FLOW_TOL * prev.amax().max(1.0) {
            break;
        }
    }
    Ok(prev.iter().copied().collect())
}

/// Points `r(y, j dt d)` for `j = 0..=count`, by one fixed-step pass.
pub fn flow_samples(f: &FoliationModule, y: &[f64], d: &[f64], dt: f64, count: usize) -> Result<Vec<Vec<f64>>> {
    check_args(f, y, d)?;
    let tv = DVector::from_column_slice(d);
    let sub = ((dt / 0.01).ceil() as usize).max(4);
    let mut z = DVector::from_column_slice(y);
    let mut out = Vec::with_capacity(count + 1);
    out.push(y.to_vec());
    for _ in 0..count {
        z = rk4(f, z, &tv, dt, sub)?;
        out.push(z.iter().copied().collect());
    }
    Ok(out)
}

/// Endpoint with its Jacobians in `y` and in `t`.
#[derive(Debug, Clone)]
pub struct FlowJacobians {
    pub point: DVector<f64>,
    pub d_y: DMatrix<f64>,
    pub d_t: DMatrix<f64>,
}

struct Augmented {
    z: DVector<f64>,
    phi: DMatrix<f64>,
    jt: DMatrix<f64>,
}

impl Augmented {
    fn axpy(&self, h: f64, d: &Augmented) -> Augmented {
        Augmented {
            z: &self.z + &d.z * h,
            phi: &self.phi + &d.phi * h,
            jt: &self.jt + &d.jt * h,
        }
    }

    fn amax_diff(&self, o: &Augmented) -> f64 {
        (&self.z - &o.z)
            .amax()
            .max((&self.phi - &o.phi).amax())
            .max((&self.jt - &o.jt).amax())
    }

    fn amax(&self) -> f64 {
        self.z.amax().max(self.phi.amax()).max(self.jt.amax())
    }
}

fn augmented_rhs(f: &FoliationModule, s: &Augmented, t: &DVector<f64>) -> Augmented {
    let df = field_jacobian(f, &s.z, t);
    Augmented {
        z: field(f, &s.z, t),
        phi: &df * &s.phi,
        jt: &df * &s.jt + eval_matrix(f, s.z.as_slice()),
    }
}

fn rk4_augmented(f: &FoliationModule, y: &DVector<f64>, t: &DVector<f64>, steps: usize) -> Result<Augmented> {
    let (n, k) = (f.ambient_dim(), f.rank());
    let mut s = Augmented {
        z: y.clone(),
        phi: DMatrix::identity(n, n),
        jt: DMatrix::zeros(n, k),
    };
    let h = 1.0 / steps as f64;
    for _ in 0..steps {
        let k1 = augmented_rhs(f, &s, t);
        let k2 = augmented_rhs(f, &s.axpy(h / 2.0, &k1), t);
        let k3 = augmented_rhs(f, &s.axpy(h / 2.0, &k2), t);
        let k4 = augmented_rhs(f, &s.axpy(h, &k3), t);
        s = s
            .axpy(h / 6.0, &k1)
            .axpy(h / 3.0, &k2)
            .axpy(h / 3.0, &k3)
            .axpy(h / 6.0, &k4);
        check_escape(&s.z)?;
    }
    Ok(s)
}

/// Integrates the flow together with its variational equations
/// `Φ' = Df Φ` and `J' = Df J + E(z)`.
pub fn flow_with_jacobians(f: &FoliationModule, y: &[f64], t: &[f64]) -> Result<FlowJacobians> {
    check_args(f, y, t)?;
    let tv = DVector::from_column_slice(t);
    let y0 = DVector::from_column_slice(y);
    let mut steps = if tv.iter().all(|&v| v == 0.0) { 1 } else { MIN_STEPS };
    let mut prev = rk4_augmented(f, &y0, &tv, steps)?;
    while steps > 1 && steps < MAX_STEPS {
        steps *= 2;
        let next = rk4_augmented(f, &y0, &tv, steps)?;
        let diff = next.amax_diff(&prev);
        prev = next;
        if diff < FLOW_TOL * prev.amax().max(1.0) {
            break;
        }
    }
    Ok(FlowJacobians {
        point: prev.z,
        d_y: prev.phi,
        d_t: prev.jt,
    })
}

/// `∂r/∂t (y, t)`.
pub fn flow_jacobian_t(f: &FoliationModule, y: &[f64], t: &[f64]) -> Result<DMatrix<f64>> {
    Ok(flow_with_jacobians(f, y, t)?.d_t)
}

/// The canonical path-holonomy chart around a base point.
#[derive(Debug, Clone)]
pub struct BiSubmersionChart {
    pub foliation: FoliationModule,
    pub base: Vec<f64>,
    pub radius: f64,
}

impl BiSubmersionChart {
    pub fn new(foliation: FoliationModule, base: Vec<f64>, radius: f64) -> Result<Self> {
        check_dim(foliation.ambient_dim(), base.len())?;
        if !(radius > 0.0) {
            return Err(Error::InvalidInput("chart radius must be positive".into()));
        }
        Ok(BiSubmersionChart {
            foliation,
            base,
            radius,
        })
    }

    /// `n + k`.
    pub fn dim(&self) -> usize {
        self.foliation.ambient_dim() + self.foliation.rank()
    }

    pub fn source(&self, y: &[f64], _t: &[f64]) -> Vec<f64> {
        y.to_vec()
    }

    pub fn range(&self, y: &[f64], t: &[f64]) -> Result<Vec<f64>> {
        let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > self.radius {
            return Err(Error::InvalidInput(format!("|t| = {norm} exceeds the chart radius")));
        }
        flow(&self.foliation, y, t)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LeafConfig {
    /// Highest collocation degree tried for the class of a kernel vector.
    pub max_degree: usize,
    pub radius: f64,
    pub class_tol: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for LeafConfig {
    fn default() -> Self {
        LeafConfig {
            max_degree: 2,
            radius: 0.05,
            class_tol: 1e-6,
            tol: 1e-8,
            seed: 0,
        }
    }
}

/// Classes `c(τ) ∈ R^k` of the kernel vectors `τ` (columns of `k0`) at `(y, t)`.
pub fn kernel_classes(f: &FoliationModule, y: &[f64], t: &[f64], k0: &DMatrix<f64>, cfg: &LeafConfig) -> Result<DMatrix<f64>> {
    let (n, k) = (f.ambient_dim(), f.rank());
    let m = k0.ncols();
    let targets = |yp: &[f64]| -> Result<DMatrix<f64>> {
        let jac = flow_with_jacobians(f, yp, t)?;
        let inv = jac
            .d_y
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("flow Jacobian is singular".into()))?;
        Ok(inv * jac.d_t * k0)
    };
    let mut best = f64::INFINITY;
    for degree in 0..=cfg.max_degree {
        let samples = 4 * foliation::binomial(n + degree, degree) * k;
        let (values, residual) = foliation::collocate(f, y, degree, samples, cfg.radius, cfg.seed, targets, m)?;
        if residual <= cfg.class_tol {
            return Ok(values);
        }
        best = best.min(residual);
    }
    Err(Error::ClassUnresolved { residual: best })
}

/// `{τ ∈ ker ∂_t r : c(τ) ∈ V}` at `u = (y, t)`.
pub fn leaf_distribution(f: &FoliationModule, y: &[f64], t: &[f64], v: &Subspace, cfg: &LeafConfig) -> Result<Subspace> {
    check_args(f, y, t)?;
    let k = f.rank();
    check_dim(k, v.ambient_dim())?;
    let jt = flow_jacobian_t(f, y, t)?;
    let k0 = foliation::evaluation_kernel(&jt, cfg.tol)?;
    if k0.is_zero() {
        return Ok(k0);
    }
    let classes = kernel_classes(f, y, t, k0.basis(), cfg)?;
    let off = &classes - v.projector() * &classes;
    let cut = cfg.class_tol * classes.amax().max(1.0);
    let m = off.ncols();
    let mut square = DMatrix::zeros(m.max(off.nrows()), m);
    square.view_mut((0, 0), (off.nrows(), m)).copy_from(&off);
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("v requested");
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= cut)
        .collect();
    if keep.is_empty() {
        return Ok(Subspace::zero(k));
    }
    let mut z = DMatrix::zeros(m, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        z.set_column(j, &v_t.row(i).transpose());
    }
    grassmann::orthonormalize(&(k0.basis() * z), 1e-10)
}

/// Tangent of the leaf `g exp(V) × {x}` in left trivialization: `V` itself.
pub fn group_leaf_oracle(act: &action::LieAlgebraAction, _g: &DMatrix<f64>, x: &[f64], v: &Subspace) -> Result<Subspace> {
    let h = action::isotropy_subalgebra(act, x, grassmann::DEFAULT_TOL)?;
    if !grassmann::contains(&h, v, 1e-6)? {
        return Err(Error::InvalidInput("V is not inside the isotropy at x".into()));
    }
    Ok(v.clone())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Accepted drift of `r` along the trace.
    pub tol: f64,
    pub leaf: LeafConfig,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            steps: 20,
            step_size: 1e-2,
            tol: 1e-8,
            leaf: LeafConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: Vec<f64>,
    pub r_residual: f64,
}

/// Follows the leaf of the distribution through `u = (y, t)` inside the
/// s-fiber over `y`, re-projecting onto the level set of `r` after each
/// Euler step.
pub fn leaf_trace(f: &FoliationModule, y: &[f64], t: &[f64], v: &Subspace, cfg: &TraceConfig) -> Result<Vec<TracePoint>> {
    check_args(f, y, t)?;
    let r0 = DVector::from_vec(flow(f, y, t)?);
    let start = leaf_distribution(f, y, t, v, &cfg.leaf)?;
    let mut out = vec![TracePoint {
        t: t.to_vec(),
        r_residual: 0.0,
    }];
    if start.is_zero() {
        return Ok(out);
    }
    let dim = start.dim();
    let heading: DVector<f64> = start.basis().column(0).into_owned();
    let mut cur = DVector::from_column_slice(t);
    let mut dist = start;
    for _ in 0..cfg.steps {
        let mut step = dist.projector() * &heading;
        let norm = step.norm();
        if norm < 1e-12 {
            break;
        }
        step *= cfg.step_size / norm;
        cur += step;
        for _ in 0..5 {
            let jac = flow_with_jacobians(f, y, cur.as_slice())?;
            let gap = &r0 - &jac.point;
            if gap.amax() <= 1e-14 {
                break;
            }
            cur += crate::linalg::lstsq(&jac.d_t, &DMatrix::from_column_slice(gap.len(), 1, gap.as_slice()), 1e-10).column(0);
        }
        let r = DVector::from_vec(flow(f, y, cur.as_slice())?);
        let residual = (&r - &r0).norm();
        dist = leaf_distribution(f, y, cur.as_slice(), v, &cfg.leaf)?;
        if dist.dim() != dim {
            return Err(Error::RankDrop {
                expected: dim,
                got: dist.dim(),
                location: cur.iter().copied().collect(),
            });
        }
        out.push(TracePoint {
            t: cur.iter().copied().collect(),
            r_residual: residual,
        });
    }
    Ok(out)
}

/// `k - dim` of the leaf distribution at `(x, 0)`.
pub fn hblup_fiber_dim(f: &FoliationModule, p: &BlowupPoint, cfg: &LeafConfig) -> Result<usize> {
    let zero = vec![0.0; f.rank()];
    Ok(f.rank() - leaf_distribution(f, &p.base, &zero, &p.subspace, cfg)?.dim())
}

/// Periodic bounding search for a foliation: returns `(y, t)` with
/// `r(y, t) = y` while `sum t_i X_i(y) ≠ 0`.
pub fn period_bound_foliation(f: &FoliationModule, region: &Region, cfg: &EtaConfig) -> Result<EtaReport> {
    check_dim(f.ambient_dim(), region.lo.len())?;
    if !(cfg.dt > 0.0 && cfg.t_max > cfg.dt) {
        return Err(Error::InvalidInput("need 0 < dt < t_max".into()));
    }
    let points = region.grid(cfg.grid)?;
    let dirs = action::sphere_directions(f.rank(), cfg.directions, cfg.seed);
    let steps = (cfg.t_max / cfg.dt).floor() as usize;
    let speed = |y: usize, d: usize| f.anchor(&points[y], &dirs[d]).norm();
    let pairs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|y| (0..dirs.len()).map(move |d| (y, d)))
        .filter(|&(y, d)| speed(y, d) > 10.0 * cfg.return_tol)
        .collect();
    let cands: Vec<(usize, usize, action::Candidate)> = pairs
        .par_iter()
        .map(|&(y, d)| -> Result<Vec<(usize, usize, action::Candidate)>> {
            let path = flow_samples(f, &points[y], dirs[d].as_slice(), cfg.dt, steps)?;
            let prof: Vec<f64> = path
                .iter()
                .map(|z| z.iter().zip(&points[y]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .collect();
            Ok(action::scan_candidates(&prof, cfg.dt, speed(y, d), cfg.return_tol)
                .into_iter()
                .map(|c| (y, d, c))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let residual = |y: usize, d: usize, t: f64| -> f64 {
        let tv: Vec<f64> = dirs[d].iter().map(|v| v * t).collect();
        match flow(f, &points[y], &tv) {
            Ok(z) => z.iter().zip(&points[y]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
            Err(_) => f64::INFINITY,
        }
    };
    let gap = |y: usize, d: usize| speed(y, d);
    let (wit, near) = action::refine_candidates(cands, residual, &gap, cfg.return_tol);
    let to_witness = |(y, d, t, r): (usize, usize, f64, f64)| Witness {
        y: points[y].clone(),
        element: dirs[d].iter().map(|v| v * t).collect(),
        norm: t,
        residual: r,
        isotropy_gap: speed(y, d) * t,
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
