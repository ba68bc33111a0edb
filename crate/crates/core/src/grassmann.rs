//! Tolerance-aware subspace arithmetic on Grassmannians.
//!
//! A [`Subspace`] is stored through an orthonormal basis of column vectors.
//! Equality of subspaces is never decided on the basis itself: every
//! comparison goes through orthogonal projectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg;

/// Relative rank cut used when callers have no better tolerance at hand.
pub const DEFAULT_TOL: f64 = 1e-8;

/// A linear subspace of `R^ambient`, held as a `ambient x dim` matrix with
/// orthonormal columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SubspaceRepr", into = "SubspaceRepr")]
pub struct Subspace {
    ambient: usize,
    basis: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct SubspaceRepr {
    ambient: usize,
    basis: Vec<Vec<f64>>,
}

impl From<Subspace> for SubspaceRepr {
    fn from(s: Subspace) -> Self {
        SubspaceRepr {
            ambient: s.ambient,
            basis: s.basis_vectors(),
        }
    }
}

impl TryFrom<SubspaceRepr> for Subspace {
    type Error = Error;

    fn try_from(r: SubspaceRepr) -> Result<Self> {
        for v in &r.basis {
            check_dim(r.ambient, v.len())?;
        }
        let flat: Vec<f64> = r.basis.iter().flatten().copied().collect();
        let raw = DMatrix::from_column_slice(r.ambient, r.basis.len(), &flat);
        orthonormalize(&raw, DEFAULT_TOL)
    }
}

impl Subspace {
    pub fn zero(ambient: usize) -> Self {
        Subspace {
            ambient,
            basis: DMatrix::zeros(ambient, 0),
        }
    }

    pub fn full(ambient: usize) -> Self {
        Subspace {
            ambient,
            basis: DMatrix::identity(ambient, ambient),
        }
    }

    /// Span of the given vectors.
    pub fn span(ambient: usize, vectors: &[Vec<f64>]) -> Result<Self> {
        for v in vectors {
            check_dim(ambient, v.len())?;
        }
        let flat: Vec<f64> = vectors.iter().flatten().copied().collect();
        orthonormalize(
            &DMatrix::from_column_slice(ambient, vectors.len(), &flat),
            DEFAULT_TOL,
        )
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_zero(&self) -> bool {
        self.dim() == 0
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn basis_vectors(&self) -> Vec<Vec<f64>> {
        self.basis
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect()
    }

    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// Component of `v` orthogonal to the subspace.
    pub fn residual(&self, v: &DVector<f64>) -> DVector<f64> {
        v - &self.basis * (self.basis.transpose() * v)
    }

    pub fn distance_to_vector(&self, v: &DVector<f64>) -> f64 {
        self.residual(v).norm()
    }

    /// Image under a linear map `R^ambient -> R^m`, re-orthonormalised.
    pub fn map(&self, m: &DMatrix<f64>, tol: f64) -> Result<Subspace> {
        check_dim(self.ambient, m.ncols())?;
        if self.is_zero() {
            return Ok(Subspace::zero(m.nrows()));
        }
        orthonormalize(&(m * &self.basis), tol)
    }

    /// Direct sum with the zero subspace of `R^extra`, placed after the
    /// existing coordinates.
    pub fn pad_zeros(&self, extra: usize) -> Subspace {
        let mut basis = DMatrix::zeros(self.ambient + extra, self.dim());
        basis
            .view_mut((0, 0), (self.ambient, self.dim()))
            .copy_from(&self.basis);
        Subspace {
            ambient: self.ambient + extra,
            basis,
        }
    }

    /// Subspace spanned by the `dim` leading eigenvectors of a symmetric
    /// matrix, typically a perturbed or extrapolated projector.
    pub fn from_projector_estimate(p: &DMatrix<f64>, dim: usize) -> Result<Subspace> {
        check_finite(p.as_slice(), "projector")?;
        let d = p.nrows();
        check_dim(d, p.ncols())?;
        if dim > d {
            return Err(Error::InvalidInput("requested dimension exceeds ambient".into()));
        }
        let sym = (p + p.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut basis = DMatrix::zeros(d, dim);
        for (j, &i) in idx.iter().take(dim).enumerate() {
            basis.set_column(j, &eig.eigenvectors.column(i));
        }
        if dim > 0 {
            basis = basis.qr().q();
        }
        Ok(Subspace { ambient: d, basis })
    }

    fn check_invariants(&self) -> bool {
        let m = self.dim();
        let gram = self.basis.transpose() * &self.basis;
        (gram - DMatrix::<f64>::identity(m, m)).norm() <= 1e-12
    }
}

/// Orthonormal basis of the column span of `raw`; directions whose singular
/// value falls below `tol * sigma_max` are dropped.
pub fn orthonormalize(raw: &DMatrix<f64>, tol: f64) -> Result<Subspace> {
    check_finite(raw.as_slice(), "matrix")?;
    if tol <= 0.0 {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let d = raw.nrows();
    if raw.ncols() == 0 || d == 0 {
        return Ok(Subspace::zero(d));
    }
    let svd = raw.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok(Subspace::zero(d));
    }
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tol * smax)
        .map(|(i, _)| i)
        .collect();
    let mut basis = DMatrix::zeros(d, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        basis.set_column(j, &u.column(i));
    }
    let out = Subspace { ambient: d, basis };
    debug_assert!(out.check_invariants());
    Ok(out)
}

/// Kernel of `m` with the relative rank cut `tol * sigma_max`.
pub fn kernel(m: &DMatrix<f64>, tol: f64) -> Result<Subspace> {
    check_finite(m.as_slice(), "matrix")?;
    if tol <= 0.0 {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    Ok(Subspace {
        ambient: m.ncols(),
        basis: linalg::null_space(m, tol),
    })
}

/// Frobenius norm of the difference of orthogonal projectors.
pub fn distance(v: &Subspace, w: &Subspace) -> Result<f64> {
    check_dim(v.ambient, w.ambient)?;
    Ok((v.projector() - w.projector()).norm())
}

/// Whether `w` lies inside `v`, i.e. `|(I - P_v) basis(w)|_F <= tol`.
pub fn contains(v: &Subspace, w: &Subspace, tol: f64) -> Result<bool> {
    check_dim(v.ambient, w.ambient)?;
    if w.is_zero() {
        return Ok(true);
    }
    let resid = &w.basis - &v.basis * (v.basis.transpose() * &w.basis);
    Ok(resid.norm() <= tol)
}

/// Orthogonal complement.
pub fn annihilator(v: &Subspace) -> Subspace {
    let d = v.ambient;
    if v.is_zero() {
        return Subspace::full(d);
    }
    if v.dim() == d {
        return Subspace::zero(d);
    }
    let comp = DMatrix::<f64>::identity(d, d) - v.projector();
    let eig = SymmetricEigen::new(comp);
    let keep: Vec<usize> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > 0.5)
        .map(|(i, _)| i)
        .collect();
    let mut basis = DMatrix::zeros(d, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        basis.set_column(j, &eig.eigenvectors.column(i));
    }
    // Re-orthonormalise to wash out eigen-solver drift.
    let q = basis.qr().q();
    Subspace { ambient: d, basis: q }
}

/// One cluster of limit subspaces together with the indices of the tails
/// that converged into it.
#[derive(Debug, Clone, Serialize)]
pub struct LimitCluster {
    pub representative: Subspace,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterOutcome {
    pub clusters: Vec<LimitCluster>,
    /// Limit of every tail, `None` when the tail is not Cauchy.
    pub limits: Vec<Option<Subspace>>,
    pub non_convergent: Vec<usize>,
}

/// Limit of a single sequence if its tail is Cauchy: the last quarter of the
/// sequence (at least three terms) must keep a fixed dimension and move by
/// less than `conv_tol` between consecutive terms.
pub fn cauchy_limit(seq: &[Subspace], conv_tol: f64) -> Option<Subspace> {
    if seq.len() < 3 {
        return None;
    }
    let tail_len = (seq.len().div_ceil(4)).max(3).min(seq.len());
    let tail = &seq[seq.len() - tail_len..];
    let dim = tail[0].dim();
    if tail.iter().any(|s| s.dim() != dim) {
        return None;
    }
    let cauchy = tail
        .windows(2)
        .all(|w| distance(&w[0], &w[1]).is_ok_and(|d| d < conv_tol));
    cauchy.then(|| tail[tail_len - 1].clone())
}

/// Detects the limit of every tail and merges limits that lie within
/// `cluster_tol` of each other (single linkage). Clusters are therefore
/// separated by at least `cluster_tol`, and subspaces of different
/// dimension never share a cluster.
pub fn limit_cluster(
    tails: &[Vec<Subspace>],
    conv_tol: f64,
    cluster_tol: f64,
) -> Result<ClusterOutcome> {
    if tails.is_empty() || tails.iter().all(|t| t.is_empty()) {
        return Err(Error::InvalidInput("no subspaces supplied".into()));
    }
    if !(conv_tol > 0.0 && conv_tol < cluster_tol) {
        return Err(Error::InvalidInput(
            "need 0 < conv_tol < cluster_tol".into(),
        ));
    }
    let ambient = tails
        .iter()
        .flat_map(|t| t.first())
        .map(|s| s.ambient)
        .next()
        .unwrap_or(0);
    for s in tails.iter().flatten() {
        check_dim(ambient, s.ambient)?;
    }

    let limits: Vec<Option<Subspace>> =
        tails.iter().map(|t| cauchy_limit(t, conv_tol)).collect();
    let non_convergent: Vec<usize> = limits
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_none())
        .map(|(i, _)| i)
        .collect();
    let converged: Vec<(usize, &Subspace)> = limits
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.as_ref().map(|s| (i, s)))
        .collect();

    let clusters = single_linkage(&converged, cluster_tol)
        .into_iter()
        .map(|group| {
            let members: Vec<usize> = group.iter().map(|&g| converged[g].0).collect();
            let medoid = group
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let cost = |i: usize| -> f64 {
                        group
                            .iter()
                            .map(|&j| distance(converged[i].1, converged[j].1).unwrap_or(0.0))
                            .sum()
                    };
                    cost(a).total_cmp(&cost(b))
                })
                .expect("non-empty group");
            LimitCluster {
                representative: converged[medoid].1.clone(),
                members,
            }
        })
        .collect();

    Ok(ClusterOutcome {
        clusters,
        limits,
        non_convergent,
    })
}

fn single_linkage(items: &[(usize, &Subspace)], tol: f64) -> Vec<Vec<usize>> {
    let n = items.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if items[i].1.dim() != items[j].1.dim() {
                continue;
            }
            if distance(items[i].1, items[j].1).is_ok_and(|d| d < tol) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        match root_slot[r] {
            Some(slot) => groups[slot].push(i),
            None => {
                root_slot[r] = Some(groups.len());
                groups.push(vec![i]);
            }
        }
    }
    groups
}
