//! Matrix decompositions on rank-2 [`Tensor`]s, backed by faer.

use faer::linalg::solvers::Solve;
use faer::Side;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor, C64, ZERO};
#[cfg(test)]
use crate::tensor::ONE;

pub const DEFAULT_REL_CUTOFF: f64 = 1e-10;

fn require_matrix(m: &Tensor, what: &str) -> Result<()> {
    if m.rank() != 2 {
        return Err(Error::Dimension(format!(
            "{what} needs a matrix, got shape {:?}",
            m.shape()
        )));
    }
    Ok(())
}

/// Thin SVD `m = u * diag(s) * vt`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub vt: Tensor,
}

pub fn svd(m: &Tensor) -> Result<Svd> {
    require_matrix(m, "svd")?;
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    let dec = m
        .as_mat()
        .thin_svd()
        .map_err(|_| Error::Convergence { iterations: 0, residual: f64::NAN })?;
    let s = dec.S().column_vector().iter().map(|z| z.re).collect();
    Ok(Svd {
        u: Tensor::from_mat(dec.U()),
        s,
        vt: Tensor::from_mat(dec.V().adjoint().to_owned().as_ref()),
    })
}

#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub vt: Tensor,
    /// Dropped squared weight over total squared weight.
    pub discarded_weight: f64,
}

/// SVD keeping at most `d_max` singular values, and none below
/// `weight_floor * s[0]`.
pub fn svd_truncate(m: &Tensor, d_max: usize, weight_floor: f64) -> Result<TruncatedSvd> {
    svd_truncate_multiplets(m, d_max, weight_floor, 0.0)
}

/// As [`svd_truncate`], but when the bond-dimension cap would separate
/// values within relative distance `multiplet_tol` of each other, the whole
/// straddling multiplet is dropped as well.
pub fn svd_truncate_multiplets(
    m: &Tensor,
    d_max: usize,
    weight_floor: f64,
    multiplet_tol: f64,
) -> Result<TruncatedSvd> {
    if d_max == 0 {
        return Err(Error::Dimension("d_max must be at least 1".into()));
    }
    let Svd { u, s, vt } = svd(m)?;
    let total: f64 = s.iter().map(|x| x * x).sum();
    let floor = weight_floor * s.first().copied().unwrap_or(0.0);
    let mut keep = s
        .iter()
        .take(d_max)
        .take_while(|&&x| x > floor && x > 0.0)
        .count()
        .max(1);
    if multiplet_tol > 0.0 && keep == d_max && keep < s.len() && s[keep] > floor {
        let mut k = keep;
        while k > 0 && s[k] >= s[k - 1] * (1.0 - multiplet_tol) {
            k -= 1;
        }
        keep = k.max(1);
    }
    let kept: f64 = s[..keep].iter().map(|x| x * x).sum();
    let discarded_weight = if total > 0.0 { ((total - kept) / total).max(0.0) } else { 0.0 };
    let (rows, cols) = (u.nrows(), vt.ncols());
    let u = Tensor::from_fn(&[rows, keep], |ix| u.get(&[ix[0], ix[1]]));
    let vt = Tensor::from_fn(&[keep, cols], |ix| vt.get(&[ix[0], ix[1]]));
    Ok(TruncatedSvd {
        u,
        s: s[..keep].to_vec(),
        vt,
        discarded_weight,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub dim: usize,
    pub sigma_max: f64,
    /// Smallest singular value of the input, retained or not.
    pub sigma_min: f64,
    pub rank: usize,
    /// Some singular value sits within a factor 10 of the cutoff.
    pub ambiguous: bool,
}

impl ConditionReport {
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.dim
    }

    pub fn condition_number(&self) -> f64 {
        self.sigma_max / self.sigma_min
    }
}

/// Moore-Penrose inverse with singular values below `rel_cutoff * sigma_max`
/// treated as zero.
pub fn pseudo_inverse(m: &Tensor, rel_cutoff: f64) -> Result<(Tensor, ConditionReport)> {
    let Svd { u, s, vt } = svd(m)?;
    let sigma_max = s.first().copied().unwrap_or(0.0);
    let cut = rel_cutoff * sigma_max;
    let rank = s.iter().filter(|&&x| x > cut).count();
    let ambiguous = s
        .iter()
        .any(|&x| x > cut / 10.0 && x < cut * 10.0);
    let report = ConditionReport {
        dim: s.len(),
        sigma_max,
        sigma_min: s.last().copied().unwrap_or(0.0),
        rank,
        ambiguous,
    };
    if rank == 0 || sigma_max == 0.0 {
        return Err(Error::SingularMetric(report));
    }
    // V diag(1/s) U^dagger restricted to the retained rank
    let (rows, cols) = (m.nrows(), m.ncols());
    let mut scaled_v = Tensor::zeros(&[cols, rank]);
    for i in 0..cols {
        for k in 0..rank {
            scaled_v.set(&[i, k], vt.get(&[k, i]).conj() / s[k]);
        }
    }
    let u_dag = Tensor::from_fn(&[rank, rows], |ix| u.get(&[ix[1], ix[0]]).conj());
    Ok((scaled_v.matmul(&u_dag)?, report))
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// `exp(scale * m)` by scaling and squaring with a degree-13 Padé approximant.
pub fn matrix_exponential(m: &Tensor, scale: C64) -> Result<Tensor> {
    require_matrix(m, "matrix_exponential")?;
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension(format!(
            "matrix_exponential needs a square matrix, got {:?}",
            m.shape()
        )));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("matrix_exponential input"));
    }
    let a = m.scale(scale);
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| a.get(&[i, j]).norm()).sum::<f64>())
        .fold(0.0, f64::max);
    if norm1 == 0.0 {
        return Ok(Tensor::identity(n));
    }
    let squarings = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a.scale_real(0.5f64.powi(squarings));
    let b = PADE13;
    let id = Tensor::identity(n);
    let a2 = a.matmul(&a)?;
    let a4 = a2.matmul(&a2)?;
    let a6 = a4.matmul(&a2)?;
    let lin = |terms: &[(&Tensor, f64)]| -> Tensor {
        let mut out = Tensor::zeros(&[n, n]);
        for (t, c) in terms {
            for (o, x) in out.data_mut().iter_mut().zip(t.data()) {
                *o += x * c;
            }
        }
        out
    };
    let u_inner = a6
        .matmul(&lin(&[(&a6, b[13]), (&a4, b[11]), (&a2, b[9])]))?
        .add(&lin(&[(&a6, b[7]), (&a4, b[5]), (&a2, b[3]), (&id, b[1])]))?;
    let u = a.matmul(&u_inner)?;
    let v = a6
        .matmul(&lin(&[(&a6, b[12]), (&a4, b[10]), (&a2, b[8])]))?
        .add(&lin(&[(&a6, b[6]), (&a4, b[4]), (&a2, b[2]), (&id, b[0])]))?;
    let p = v.add(&u)?;
    let q = v.sub(&u)?;
    let lu = q.as_mat().partial_piv_lu();
    let mut r = Tensor::from_mat(lu.solve(p.as_mat()).as_ref());
    for _ in 0..squarings {
        r = r.matmul(&r)?;
    }
    if !r.is_finite() {
        return Err(Error::NonFinite("matrix_exponential result"));
    }
    Ok(r)
}

/// Thin QR `m = q * r` with the diagonal of `r` made real and nonnegative,
/// which fixes the factorisation uniquely for full-rank input.
pub fn qr(m: &Tensor) -> Result<(Tensor, Tensor)> {
    require_matrix(m, "qr")?;
    if !m.is_finite() {
        return Err(Error::NonFinite("qr input"));
    }
    let dec = m.as_mat().qr();
    let mut q = Tensor::from_mat(dec.compute_thin_Q().as_ref());
    let mut r = Tensor::from_mat(dec.thin_R());
    let (rows, k) = (q.nrows(), q.ncols());
    let cols = r.ncols();
    for j in 0..k {
        let d = r.get(&[j, j]);
        if d.norm() > 0.0 {
            let ph = d / d.norm();
            for c in 0..cols {
                r.set(&[j, c], r.get(&[j, c]) * ph.conj());
            }
            for i in 0..rows {
                q.set(&[i, j], q.get(&[i, j]) * ph);
            }
        }
    }
    Ok((q, r))
}

/// Eigenvalues and right eigenvectors (as columns) of a general square matrix.
pub fn eig(m: &Tensor) -> Result<(Vec<C64>, Tensor)> {
    require_matrix(m, "eig")?;
    if !m.is_finite() {
        return Err(Error::NonFinite("eig input"));
    }
    let dec = m
        .as_mat()
        .eigen()
        .map_err(|_| Error::Convergence { iterations: 0, residual: f64::NAN })?;
    let vals = dec.S().column_vector().iter().copied().collect();
    Ok((vals, Tensor::from_mat(dec.U())))
}

pub fn eigenvalues(m: &Tensor) -> Result<Vec<C64>> {
    require_matrix(m, "eigenvalues")?;
    m.as_mat()
        .eigenvalues()
        .map_err(|_| Error::Convergence { iterations: 0, residual: f64::NAN })
}

/// Ascending eigenvalues and eigenvectors of a Hermitian matrix.
pub fn hermitian_eig(m: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    require_matrix(m, "hermitian_eig")?;
    let dec = m
        .as_mat()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::Convergence { iterations: 0, residual: f64::NAN })?;
    let vals = dec.S().column_vector().iter().map(|z| z.re).collect();
    Ok((vals, Tensor::from_mat(dec.U())))
}

/// `a⁻¹ b` by LU with partial pivoting.
pub fn solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_matrix(a, "solve")?;
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "solve with {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let x = Tensor::from_mat(a.as_mat().partial_piv_lu().solve(b.as_mat()).as_ref());
    if !x.is_finite() {
        return Err(Error::NonFinite("solve result"));
    }
    Ok(x)
}

pub fn inverse(m: &Tensor) -> Result<Tensor> {
    let (p, report) = pseudo_inverse(m, 1e-13)?;
    if !report.is_full_rank() {
        return Err(Error::SingularMetric(report));
    }
    Ok(p)
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: C64,
    /// Unit 2-norm.
    pub vector: Vec<C64>,
    /// |λ₂| / |λ₁| from the last Krylov cycle's Ritz values.
    pub gap_ratio: f64,
    /// `gap_ratio > 1 - 1e-6`; the caller decides whether that matters.
    pub degenerate: bool,
    pub cycles: usize,
}

const KRYLOV_DIM: usize = 32;
const RITZ_TIE: f64 = 1e-9;

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Dominant (largest-modulus) eigenpair of a linear map by restarted Arnoldi.
///
/// The seed is the all-ones vector. Whenever the Krylov space closes early
/// the basis is extended with a fixed-seed random vector orthogonalised
/// against it, so operators whose dominant eigenvector is orthogonal to the
/// seed are still handled. `max_iter` bounds the number of restart cycles.
pub fn dominant_eigenpair<F>(op: F, n: usize, tol: f64, max_iter: usize) -> Result<EigenPair>
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    if n == 0 {
        return Err(Error::Dimension("dominant_eigenpair on empty space".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut fresh = |basis: &[Vec<C64>]| -> Option<Vec<C64>> {
        for _ in 0..8 {
            let mut w: Vec<C64> = (0..n)
                .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            for _ in 0..2 {
                for v in basis {
                    let h = dot(v, &w);
                    w.iter_mut().zip(v).for_each(|(x, y)| *x -= h * y);
                }
            }
            let nw = norm(&w);
            if nw > 1e-8 {
                return Some(w.into_iter().map(|x| x / nw).collect());
            }
        }
        None
    };

    let m = KRYLOV_DIM.min(n);
    let mut start: Vec<C64> = vec![C64::new(1.0 / (n as f64).sqrt(), 0.0); n];
    let mut last_residual = f64::INFINITY;

    for cycle in 1..=max_iter.max(1) {
        let mut basis: Vec<Vec<C64>> = vec![start.clone()];
        let mut h = vec![vec![ZERO; m]; m + 1];
        let mut dim = m;
        for j in 0..m {
            let mut w = op(&basis[j]);
            if w.len() != n {
                return Err(Error::Dimension("operator changed vector length".into()));
            }
            let w_norm = norm(&w);
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let c = dot(v, &w);
                    h[i][j] += c;
                    w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
                }
            }
            if j + 1 == m {
                h[j + 1][j] = C64::new(norm(&w), 0.0);
                break;
            }
            let beta = norm(&w);
            if beta <= 1e-12 * w_norm.max(1e-300) || beta == 0.0 {
                // invariant subspace found; keep going in its complement
                match fresh(&basis) {
                    Some(v) => basis.push(v),
                    None => {
                        dim = j + 1;
                        break;
                    }
                }
            } else {
                h[j + 1][j] = C64::new(beta, 0.0);
                basis.push(w.into_iter().map(|x| x / beta).collect());
            }
        }

        let hm = Tensor::from_fn(&[dim, dim], |ix| h[ix[0]][ix[1]]);
        let (ritz, vecs) = eig(&hm)?;
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| ritz[b].norm().total_cmp(&ritz[a].norm()));
        // among values of (numerically) equal modulus prefer the largest real
        // part, then the largest imaginary part, so that an operator and its
        // transpose select the same eigenvalue
        let lead = ritz[order[0]].norm();
        let tied = order
            .iter()
            .take_while(|&&i| ritz[i].norm() >= lead * (1.0 - RITZ_TIE))
            .count();
        let close = |x: f64, y: f64| (x - y).abs() <= RITZ_TIE * lead;
        let mut best = 0;
        for t in 1..tied {
            let (z, b) = (ritz[order[t]], ritz[order[best]]);
            let better = if close(z.re, b.re) { z.im > b.im } else { z.re > b.re };
            if better {
                best = t;
            }
        }
        order.swap(0, best);
        let top = order[0];
        let theta = ritz[top];
        let gap_ratio = if dim > 1 && theta.norm() > 0.0 {
            ritz[order[1]].norm() / theta.norm()
        } else {
            0.0
        };

        let mut x = vec![ZERO; n];
        for (k, v) in basis.iter().take(dim).enumerate() {
            let c = vecs.get(&[k, top]);
            x.iter_mut().zip(v).for_each(|(a, b)| *a += c * b);
        }
        let nx = norm(&x);
        x.iter_mut().for_each(|a| *a /= nx);
        // fix the phase so the largest component is real positive
        let (imax, _) = x
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, z)| if z.norm() > acc.1 + 1e-12 { (i, z.norm()) } else { acc });
        let ph = x[imax].conj() / x[imax].norm();
        x.iter_mut().for_each(|a| *a *= ph);

        let ax = op(&x);
        let r: f64 = ax
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - theta * b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        last_residual = r;
        let scale = if theta.norm() > 1e-300 { theta.norm() } else { 1.0 };
        if r <= tol * scale {
            return Ok(EigenPair {
                value: theta,
                vector: x,
                gap_ratio,
                degenerate: gap_ratio > 1.0 - 1e-6,
                cycles: cycle,
            });
        }
        start = x;
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual: last_residual,
    })
}

/// Dense `a^dagger * b` without materialising the adjoint.
pub fn adjoint_matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "adjoint_matmul {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, n) = (a.ncols(), b.ncols());
    let mut out = vec![ZERO; m * n];
    gemm(&mut out, a.as_mat().adjoint(), b.as_mat());
    Tensor::new(vec![m, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[rows, cols], |_| {
            C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
        })
    }

    fn reconstruct(t: &TruncatedSvd) -> Tensor {
        let s: Vec<C64> = t.s.iter().map(|&x| C64::new(x, 0.0)).collect();
        t.u.matmul(&Tensor::diag(&s)).unwrap().matmul(&t.vt).unwrap()
    }

    #[test]
    fn truncation_of_diagonal() {
        let m = Tensor::real_matrix(&[&[3.0, 0.0, 0.0], &[0.0, 2.0, 0.0], &[0.0, 0.0, 1.0]]).unwrap();
        let t = svd_truncate(&m, 2, 0.0).unwrap();
        assert_eq!(t.s.len(), 2);
        assert!((t.s[0] - 3.0).abs() < 1e-14 && (t.s[1] - 2.0).abs() < 1e-14);
        assert!((t.discarded_weight - 1.0 / 14.0).abs() < 1e-14);
    }

    #[test]
    fn identity_keeps_everything() {
        let t = svd_truncate(&Tensor::identity(2), 2, 0.0).unwrap();
        assert_eq!(t.s, vec![1.0, 1.0]);
        assert_eq!(t.discarded_weight, 0.0);
    }

    #[test]
    fn multiplets_are_not_split_at_the_cap() {
        let d = |v: &[f64]| Tensor::diag(&v.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>());
        let m = d(&[1.0, 0.5, 0.5 * (1.0 - 1e-6), 0.1]);
        assert_eq!(svd_truncate_multiplets(&m, 2, 0.0, 1e-3).unwrap().s.len(), 1);
        assert_eq!(svd_truncate_multiplets(&m, 3, 0.0, 1e-3).unwrap().s.len(), 3);
        assert_eq!(svd_truncate(&m, 2, 0.0).unwrap().s.len(), 2);
        let tie = d(&[1.0, 1.0]);
        assert_eq!(svd_truncate_multiplets(&tie, 1, 0.0, 1e-3).unwrap().s.len(), 1);
    }

    #[test]
    fn weight_floor_drops_small_values() {
        let m = Tensor::diag(&[C64::new(1.0, 0.0), C64::new(1e-9, 0.0), C64::new(1e-16, 0.0)]);
        let t = svd_truncate(&m, 3, 1e-12).unwrap();
        assert_eq!(t.s.len(), 2);
    }

    #[test]
    fn random_reconstruction() {
        for seed in 0..4 {
            let m = random_matrix(8, 8, seed);
            let t = svd_truncate(&m, 8, 0.0).unwrap();
            assert!(reconstruct(&t).dist_max(&m) < 1e-12);
            let uu = adjoint_matmul(&t.u, &t.u).unwrap();
            assert!(uu.dist_max(&Tensor::identity(8)) < 1e-12);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let m = Tensor::real_matrix(&[&[f64::NAN, 0.0], &[0.0, 1.0]]).unwrap();
        assert!(matches!(svd_truncate(&m, 2, 0.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn pinv_identity_and_cutoff() {
        let (p, r) = pseudo_inverse(&Tensor::identity(4), DEFAULT_REL_CUTOFF).unwrap();
        assert!(p.dist_max(&Tensor::identity(4)) < 1e-14);
        assert_eq!(r.rank, 4);

        let m = Tensor::diag(&[ONE, C64::new(1e-20, 0.0)]);
        let (p, r) = pseudo_inverse(&m, 1e-12).unwrap();
        assert_eq!(r.rank, 1);
        assert!(p.dist_max(&Tensor::diag(&[ONE, ZERO])) < 1e-14);
        assert!(!r.ambiguous);
    }

    #[test]
    fn pinv_flags_ambiguous_and_singular() {
        let m = Tensor::diag(&[ONE, C64::new(3e-10, 0.0)]);
        let (_, r) = pseudo_inverse(&m, DEFAULT_REL_CUTOFF).unwrap();
        assert!(r.ambiguous);
        assert!(matches!(
            pseudo_inverse(&Tensor::zeros(&[2, 2]), DEFAULT_REL_CUTOFF),
            Err(Error::SingularMetric(_))
        ));
    }

    #[test]
    fn penrose_identities_on_rank_deficient() {
        for seed in 0..5 {
            let a = random_matrix(7, 3, seed).matmul(&random_matrix(3, 6, seed + 100)).unwrap();
            let (p, r) = pseudo_inverse(&a, DEFAULT_REL_CUTOFF).unwrap();
            assert_eq!(r.rank, 3);
            let apa = a.matmul(&p).unwrap().matmul(&a).unwrap();
            let pap = p.matmul(&a).unwrap().matmul(&p).unwrap();
            let ap = a.matmul(&p).unwrap();
            let pa = p.matmul(&a).unwrap();
            assert!(apa.dist_max(&a) < 1e-10);
            assert!(pap.dist_max(&p) < 1e-10);
            assert!(ap.dist_max(&ap.dagger()) < 1e-10);
            assert!(pa.dist_max(&pa.dagger()) < 1e-10);
        }
    }

    #[test]
    fn qr_has_positive_diagonal() {
        let m = random_matrix(9, 4, 21);
        let (q, r) = qr(&m).unwrap();
        assert!(q.matmul(&r).unwrap().dist_max(&m) < 1e-12);
        assert!(adjoint_matmul(&q, &q).unwrap().dist_max(&Tensor::identity(4)) < 1e-12);
        for j in 0..4 {
            assert!(r.get(&[j, j]).im.abs() < 1e-14 && r.get(&[j, j]).re > 0.0);
        }
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let m = random_matrix(5, 5, 3);
        let e = matrix_exponential(&m, ZERO).unwrap();
        assert!(e.dist_max(&Tensor::identity(5)) < 1e-15);
    }

    #[test]
    fn expm_rejects_non_square() {
        assert!(matches!(
            matrix_exponential(&Tensor::zeros(&[2, 3]), ONE),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn expm_diagonal_against_scalar_exponentials() {
        let d = [C64::new(2.0, -1.0), C64::new(-30.0, 4.0), C64::new(0.5, 0.0)];
        let e = matrix_exponential(&Tensor::diag(&d), ONE).unwrap();
        for (i, z) in d.iter().enumerate() {
            let want = z.exp();
            assert!((e.get(&[i, i]) - want).norm() <= 1e-12 * want.norm().max(1.0));
        }
    }

    #[test]
    fn expm_matches_eigendecomposition_oracle() {
        // Hermitian input: exp via eigenvectors is an independent route
        let a = random_matrix(6, 6, 9);
        let h = a.add(&a.dagger()).unwrap().scale_real(2.0);
        let (vals, vecs) = hermitian_eig(&h).unwrap();
        let ed: Vec<C64> = vals.iter().map(|&x| C64::new(0.0, -x).exp()).collect();
        let oracle = vecs.matmul(&Tensor::diag(&ed)).unwrap().matmul(&vecs.dagger()).unwrap();
        let e = matrix_exponential(&h, C64::new(0.0, -1.0)).unwrap();
        assert!(e.dist_max(&oracle) < 1e-12);
    }

    #[test]
    fn expm_group_property() {
        let m = random_matrix(5, 5, 11).scale_real(0.8);
        let s = C64::new(0.7, 0.2);
        let t = C64::new(-1.3, 0.5);
        let lhs = matrix_exponential(&m, s).unwrap().matmul(&matrix_exponential(&m, t).unwrap()).unwrap();
        let rhs = matrix_exponential(&m, s + t).unwrap();
        assert!(lhs.dist_max(&rhs) < 1e-10 * rhs.max_abs().max(1.0));
    }

    fn dense_op(m: &Tensor) -> impl Fn(&[C64]) -> Vec<C64> + '_ {
        move |v: &[C64]| {
            let n = m.nrows();
            (0..n).map(|i| (0..n).map(|j| m.get(&[i, j]) * v[j]).sum()).collect()
        }
    }

    #[test]
    fn dominant_of_diagonal() {
        let m = Tensor::real_matrix(&[&[2.0, 0.0], &[0.0, 1.0]]).unwrap();
        let e = dominant_eigenpair(dense_op(&m), 2, 1e-12, 50).unwrap();
        assert!((e.value - C64::new(2.0, 0.0)).norm() < 1e-12);
        assert!((e.vector[0].norm() - 1.0).abs() < 1e-12);
        assert!((e.gap_ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dominant_eigenvector_orthogonal_to_seed() {
        // all-ones lies entirely in the +1 eigenspace
        let m = Tensor::real_matrix(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let shifted = m.scale_real(-2.0);
        let e = dominant_eigenpair(dense_op(&shifted), 2, 1e-12, 50).unwrap();
        assert!((e.value - C64::new(2.0, 0.0)).norm() < 1e-12, "{:?}", e.value);
    }

    #[test]
    fn dominant_matches_dense_on_random() {
        let m = random_matrix(60, 60, 4);
        let vals = eigenvalues(&m).unwrap();
        let top = vals.iter().max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap()).unwrap();
        let e = dominant_eigenpair(dense_op(&m), 60, 1e-10, 500).unwrap();
        assert!((e.value - top).norm() < 1e-8 * top.norm());
    }
}
