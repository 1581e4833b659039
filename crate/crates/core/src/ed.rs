//! Dense biorthogonal exact diagonalisation of short chains.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{eig, eigenvalues, solve};
use crate::parent::{assemble_dense, hamiltonian_spec};
use crate::tensor::{Tensor, C64};

/// Eigenvalues closer than this are treated as equal.
pub const TIE_TOL: f64 = 1e-10;
/// Pairing residual above which an exceptional point is reported.
pub const EP_TOL: f64 = 1e-6;
/// `Re E₀` below `-DEPARTURE_TOL` counts as leaving the zero-energy sector.
pub const DEPARTURE_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct BiorthogonalSpectrum {
    /// Ascending real part, then ascending `|Im|`.
    pub eigenvalues: Vec<C64>,
    /// Columns `R_i`, unit norm.
    pub right: Tensor,
    /// Columns `L_i` with `<L_i|R_j> = δ_ij`.
    pub left: Tensor,
    /// `max_i |<L_i|R_i> - 1|` of the raw inverse before rescaling.
    pub pairing_residual: f64,
    pub exceptional_point: bool,
}

impl BiorthogonalSpectrum {
    pub fn right_vector(&self, i: usize) -> Vec<C64> {
        column(&self.right, i)
    }

    pub fn left_vector(&self, i: usize) -> Vec<C64> {
        column(&self.left, i)
    }

    /// CSV with columns `re,im,index`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["re", "im", "index"])?;
        for (i, e) in self.eigenvalues.iter().enumerate() {
            out.write_record([e.re.to_string(), e.im.to_string(), i.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn column(m: &Tensor, j: usize) -> Vec<C64> {
    (0..m.nrows()).map(|i| m.get(&[i, j])).collect()
}

fn order(a: &C64, b: &C64) -> std::cmp::Ordering {
    a.re.total_cmp(&b.re).then(a.im.abs().total_cmp(&b.im.abs()))
}

fn require_square(h: &Tensor) -> Result<usize> {
    if h.rank() != 2 || h.nrows() != h.ncols() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {:?}",
            h.shape()
        )));
    }
    Ok(h.nrows())
}

pub fn full_spectrum(h: &Tensor) -> Result<BiorthogonalSpectrum> {
    let n = require_square(h)?;
    let (vals, vecs) = eig(h)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| order(&vals[a], &vals[b]));

    let mut right = Tensor::zeros(&[n, n]);
    for (new, &old) in idx.iter().enumerate() {
        let col = column(&vecs, old);
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for (i, z) in col.iter().enumerate() {
            right.set(&[i, new], z / norm);
        }
    }
    // rows of R⁻¹ are the (conjugated) left vectors
    let inv = solve(&right, &Tensor::identity(n))?;
    let pairing = inv.matmul(&right)?;
    let pairing_residual = (0..n)
        .map(|i| (pairing.get(&[i, i]) - C64::new(1.0, 0.0)).norm())
        .fold(0.0, f64::max);
    let mut left = inv.dagger();
    for j in 0..n {
        let p = pairing.get(&[j, j]);
        for i in 0..n {
            left.set(&[i, j], left.get(&[i, j]) / p.conj());
        }
    }
    let exceptional_point = pairing_residual > EP_TOL;
    if exceptional_point {
        log::warn!("near-defective spectrum: pairing residual {pairing_residual:.3e}");
    }
    Ok(BiorthogonalSpectrum {
        eigenvalues: idx.iter().map(|&i| vals[i]).collect(),
        right,
        left,
        pairing_residual,
        exceptional_point,
    })
}

/// Eigenvalues only, in the same order as [`full_spectrum`].
pub fn sorted_eigenvalues(h: &Tensor) -> Result<Vec<C64>> {
    require_square(h)?;
    let mut vals = eigenvalues(h)?;
    vals.sort_by(order);
    Ok(vals)
}

#[derive(Clone, Debug)]
pub struct GroundPair {
    pub energy: C64,
    pub right: Vec<C64>,
    pub left: Vec<C64>,
    /// Next distinct real part minus `Re E₀`; infinite for a 1x1 problem.
    pub gap_real: f64,
    /// Indices into the sorted spectrum of all eigenvalues equal to `E₀`.
    pub manifold: Vec<usize>,
}

impl GroundPair {
    pub fn is_degenerate(&self) -> bool {
        self.manifold.len() > 1
    }
}

/// Selects the ground state from a sorted spectrum.
pub fn ground_from_spectrum(spec: &BiorthogonalSpectrum) -> GroundPair {
    let vals = &spec.eigenvalues;
    let min_re = vals[0].re;
    let ground = vals
        .iter()
        .enumerate()
        .take_while(|(_, e)| e.re - min_re <= TIE_TOL)
        .min_by(|a, b| a.1.im.abs().total_cmp(&b.1.im.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let e0 = vals[ground];
    let manifold: Vec<usize> = vals
        .iter()
        .enumerate()
        .filter(|(_, e)| (e.re - e0.re).abs() <= TIE_TOL && (e.im - e0.im).abs() <= TIE_TOL)
        .map(|(i, _)| i)
        .collect();
    if manifold.len() > 1 {
        log::info!("ground manifold of dimension {}", manifold.len());
    }
    let gap_real = vals
        .iter()
        .map(|e| e.re - min_re)
        .find(|&g| g > TIE_TOL)
        .unwrap_or(f64::INFINITY);
    GroundPair {
        energy: e0,
        right: spec.right_vector(ground),
        left: spec.left_vector(ground),
        gap_real,
        manifold,
    }
}

pub fn ground_pair(h: &Tensor) -> Result<GroundPair> {
    Ok(ground_from_spectrum(&full_spectrum(h)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossingReport {
    pub n_sites: usize,
    /// `(λ, E₀)` at every evaluated point, in evaluation order.
    pub samples: Vec<(f64, C64)>,
    /// Estimate of the first λ with `Re E₀ < 0`, refined to `resolution`.
    pub lambda_star: Option<f64>,
    pub bracket: Option<(f64, f64)>,
}

fn ground_energy(lambda: f64, u: f64, n: usize) -> Result<C64> {
    let spec = hamiltonian_spec(lambda, u)?;
    let vals = sorted_eigenvalues(&assemble_dense(&spec, n, true)?)?;
    Ok(vals[0])
}

/// Scans `lambda_grid` (ascending) on an `n`-site ring and bisects the first
/// interval where `Re E₀` drops below zero.
pub fn level_crossing_scan(
    lambda_grid: &[f64],
    n_sites: usize,
    u: f64,
    resolution: f64,
) -> Result<CrossingReport> {
    let mut samples = Vec::new();
    let departed = |e: C64| e.re < -DEPARTURE_TOL;
    let mut bracket = None;
    let mut prev: Option<f64> = None;
    for &lambda in lambda_grid {
        let e = ground_energy(lambda, u, n_sites)?;
        samples.push((lambda, e));
        if departed(e) {
            bracket = prev.map(|p| (p, lambda));
            break;
        }
        prev = Some(lambda);
    }
    let Some((mut lo, mut hi)) = bracket else {
        return Ok(CrossingReport {
            n_sites,
            samples,
            lambda_star: None,
            bracket: None,
        });
    };
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        let e = ground_energy(mid, u, n_sites)?;
        samples.push((mid, e));
        if departed(e) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(CrossingReport {
        n_sites,
        samples,
        lambda_star: Some(0.5 * (lo + hi)),
        bracket: Some((lo, hi)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mps::UnitCellMps;
    use crate::parent::ChainOperator;
    use crate::symmetry::{catalog_state, StateName};
    use crate::tensor::{I, ONE, ZERO};

    fn psi0_vector(n: usize) -> Vec<C64> {
        UnitCellMps::from_tensor(&catalog_state(StateName::Psi0).tensor(), n)
            .unwrap()
            .to_finite_vector(1)
            .unwrap()
            .amplitudes
    }

    fn overlap(a: &[C64], b: &[C64]) -> f64 {
        let ab: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
        let na: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        ab.norm() / (na * nb)
    }

    #[test]
    fn sorting_contract() {
        let h = Tensor::diag(&[ONE, I.scale(2.0)]);
        let s = full_spectrum(&h).unwrap();
        assert!((s.eigenvalues[0] - I * 2.0).norm() < 1e-14);
        assert!((s.eigenvalues[1] - ONE).norm() < 1e-14);
    }

    #[test]
    fn trivial_ground_pair() {
        let g = ground_pair(&Tensor::diag(&[ZERO, ONE])).unwrap();
        assert!(g.energy.norm() < 1e-14);
        assert!((g.gap_real - 1.0).abs() < 1e-14);
        assert!(!g.is_degenerate());
    }

    #[test]
    fn biorthogonality_of_random_matrix() {
        let h = Tensor::from_fn(&[12, 12], |ix| {
            C64::new(((ix[0] * 7 + ix[1] * 3) % 11) as f64 - 5.0, ((ix[0] + 2 * ix[1]) % 5) as f64)
        });
        let s = full_spectrum(&h).unwrap();
        let hn = h.norm();
        let lr = s.left.dagger().matmul(&s.right).unwrap();
        assert!(lr.dist_max(&Tensor::identity(12)) < 1e-8);
        for i in 0..12 {
            let r = Tensor::vector(s.right_vector(i)).reshape(&[12, 1]).unwrap();
            let l = Tensor::vector(s.left_vector(i)).reshape(&[12, 1]).unwrap();
            let e = s.eigenvalues[i];
            assert!(h.matmul(&r).unwrap().sub(&r.scale(e)).unwrap().norm() < 1e-8 * hn);
            assert!(h.dagger().matmul(&l).unwrap().sub(&l.scale(e.conj())).unwrap().norm() < 1e-8 * hn);
        }
    }

    #[test]
    fn hermitian_chain() {
        let spec = hamiltonian_spec(0.0, 0.0).unwrap();
        let h = assemble_dense(&spec, 5, true).unwrap();
        let s = full_spectrum(&h).unwrap();
        assert!(s.eigenvalues.iter().all(|e| e.im.abs() < 1e-10));
        let g = ground_from_spectrum(&s);
        assert!(g.energy.norm() < 1e-9);
        assert!(g.gap_real > 1e-3);
        assert!(overlap(&g.left, &g.right) > 1.0 - 1e-10);
    }

    #[test]
    fn adjoint_spectrum_is_conjugate() {
        let spec = hamiltonian_spec(0.7, 0.2).unwrap();
        let h = assemble_dense(&spec, 5, true).unwrap();
        let a = sorted_eigenvalues(&h).unwrap();
        let mut b: Vec<C64> = sorted_eigenvalues(&h.dagger()).unwrap().iter().map(|z| z.conj()).collect();
        b.sort_by(order);
        let mut a2 = a.clone();
        a2.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
        b.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
        // match greedily to absorb ordering noise among near-ties
        let mut used = vec![false; b.len()];
        for x in &a2 {
            let (j, d) = b
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .map(|(j, y)| (j, (x - y).norm()))
                .min_by(|p, q| p.1.total_cmp(&q.1))
                .unwrap();
            used[j] = true;
            assert!(d < 1e-8);
        }
    }

    #[test]
    fn zero_mode_is_ground_state_below_crossing() {
        let spec = hamiltonian_spec(0.3, 0.0).unwrap();
        let g = ground_pair(&assemble_dense(&spec, 5, true).unwrap()).unwrap();
        assert!(g.energy.norm() < 1e-9);
        assert!(overlap(&g.right, &psi0_vector(5)) > 1.0 - 1e-6);
    }

    #[test]
    fn translation_invariance() {
        let n = 5;
        let spec = hamiltonian_spec(0.6, 0.3).unwrap();
        let op = ChainOperator::from_spec(&spec, n, true).unwrap();
        let h = op.dense().unwrap();
        let dim = op.dim();
        // cyclic shift of site labels: digit string rotated by one
        let shift = |s: usize| (s % 3) * 3usize.pow(n as u32 - 1) + s / 3;
        let t = Tensor::from_fn(&[dim, dim], |ix| if ix[0] == shift(ix[1]) { ONE } else { ZERO });
        let th = t.matmul(&h).unwrap();
        let ht = h.matmul(&t).unwrap();
        assert!(th.dist_max(&ht) < 1e-12);
    }

    #[test]
    fn no_crossing_at_small_lambda() {
        let r = level_crossing_scan(&[0.0, 0.2, 0.4], 4, 0.0, 1e-3).unwrap();
        assert_eq!(r.lambda_star, None);
        assert_eq!(r.samples.len(), 3);
    }

    #[test]
    fn spectrum_csv() {
        let s = full_spectrum(&Tensor::diag(&[ONE, I])).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("re,im,index"));
        assert_eq!(text.lines().count(), 3);
    }
}
