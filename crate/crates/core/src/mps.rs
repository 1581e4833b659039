//! Infinite matrix product states with a `k`-site unit cell.
//!
//! States are stored in right-canonical form: site tensors `B_i = Γ_i Λ_i`
//! with shape `(d, D_{i-1}, D_i)` satisfying `Σ_s B^s B^s† = 1`, and the
//! Schmidt values `Λ_i` of the bond to the right of each site. The bond to
//! the left of site 0 is bond `k - 1`. `Γ_i` is recovered on demand.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{dominant_eigenpair, qr, svd_truncate, svd_truncate_multiplets};
use crate::parent::LocalTerm;
use crate::tensor::{contract, Tensor, C64, ZERO};

/// Schmidt values below this (after normalisation) are purged.
pub const SCHMIDT_FLOOR: f64 = 1e-14;

const ORTHO_TOL: f64 = 1e-14;
const ORTHO_MAX_ITER: usize = 20_000;
// accepted after ORTHO_MAX_ITER when the sweep stalls at round-off
const ORTHO_STALL_TOL: f64 = 1e-12;
const FINITE_MAX_SITES: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct UnitCellMps {
    d: usize,
    sites: Vec<Tensor>,
    lambdas: Vec<Vec<f64>>,
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Contracts consecutive site tensors into one block `(d^m, D_left, D_right)`.
pub fn contract_sites(sites: &[Tensor]) -> Result<Tensor> {
    let first = sites
        .first()
        .ok_or_else(|| Error::Dimension("empty site list".into()))?;
    let d = first.shape()[0];
    let dl = first.shape()[1];
    // running (D_left * d^j) x D_j matrix
    let mut acc = first.permute(&[1, 0, 2])?;
    let mut phys = d;
    let mut dr = first.shape()[2];
    acc = acc.reshape(&[dl * phys, dr])?;
    for a in &sites[1..] {
        let (da, d1, d2) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        if d1 != dr {
            return Err(Error::AxisMismatch { a: 2, b: 1, ea: dr, eb: d1 });
        }
        let next = a.permute(&[1, 0, 2])?.reshape(&[d1, da * d2])?;
        acc = acc.matmul(&next)?;
        phys *= da;
        dr = d2;
        acc = acc.reshape(&[dl * phys, dr])?;
    }
    acc.reshape(&[dl, phys, dr])?.permute(&[1, 0, 2])
}

/// Splits a block `psi` of shape `(D_l, d^m, D_r)` into `m` right-canonical
/// sites without inverting any Schmidt values. `left_lambda` are the
/// Schmidt values on the bond to the left of the block.
///
/// Returns the sites, the `m - 1` interior bond spectra (left to right) and
/// the summed discarded weight.
pub(crate) fn split_block(
    psi: Tensor,
    left_lambda: &[f64],
    d: usize,
    m: usize,
    d_max: usize,
    weight_floor: f64,
    multiplet_tol: f64,
) -> Result<(Vec<Tensor>, Vec<Vec<f64>>, f64)> {
    let dl = psi.shape()[0];
    let mut dr = psi.shape()[2];
    let mut phys = psi.shape()[1];
    let mut psi = psi;
    let mut rev_sites = Vec::with_capacity(m);
    let mut rev_lambdas = Vec::with_capacity(m.saturating_sub(1));
    let mut discarded = 0.0;
    for _ in 1..m {
        phys /= d;
        let rows = dl * phys;
        let cols = d * dr;
        let mut theta = psi.clone().reshape(&[rows, cols])?;
        for (r, chunk) in theta.data_mut().chunks_mut(phys * cols).enumerate() {
            let l = left_lambda[r];
            chunk.iter_mut().for_each(|z| *z *= l);
        }
        let t = svd_truncate_multiplets(&theta, d_max, weight_floor, multiplet_tol)?;
        discarded += t.discarded_weight;
        let chi = t.s.len();
        let mut s = t.s;
        normalize(&mut s);
        if s.iter().all(|&x| x < SCHMIDT_FLOOR) {
            return Err(Error::StateCollapse(rev_lambdas.len()));
        }
        rev_sites.push(t.vt.clone().reshape(&[chi, d, dr])?.permute(&[1, 0, 2])?);
        rev_lambdas.push(s);
        // psi <- psi V^dagger
        let flat = psi.reshape(&[rows, cols])?;
        let v_dag = t.vt.dagger();
        psi = flat.matmul(&v_dag)?.reshape(&[dl, phys, chi])?;
        dr = chi;
    }
    // normalise so that the left-lambda weighted block has unit norm
    let weighted: f64 = psi
        .data()
        .chunks(phys * dr)
        .enumerate()
        .map(|(r, c)| left_lambda[r].powi(2) * c.iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if weighted == 0.0 || !weighted.is_finite() {
        return Err(Error::StateCollapse(0));
    }
    let first = psi.scale_real(1.0 / weighted).permute(&[1, 0, 2])?;
    rev_sites.push(first);
    rev_sites.reverse();
    rev_lambdas.reverse();
    Ok((rev_sites, rev_lambdas, discarded))
}

fn transpose_reverse(sites: &[Tensor]) -> Vec<Tensor> {
    sites
        .iter()
        .rev()
        .map(|a| a.permute(&[0, 2, 1]).expect("rank-3 site"))
        .collect()
}

/// Repeated QR sweeps until `L A_cell = A_L,cell L` with `A_L` left-orthonormal.
fn left_orthonormalize(sites: &[Tensor]) -> Result<(Vec<Tensor>, Tensor)> {
    let d0 = sites[0].shape()[1];
    let mut l = Tensor::identity(d0);
    let mut diff = f64::INFINITY;
    let mut last = Vec::new();
    for _ in 0..ORTHO_MAX_ITER {
        let mut cur = l.clone();
        let mut out = Vec::with_capacity(sites.len());
        for a in sites {
            let d = a.shape()[0];
            let r = cur.nrows();
            let la = contract(&cur, a, &[(1, 1)])?.permute(&[1, 0, 2])?;
            let dr = la.shape()[2];
            let (q, rr) = qr(&la.reshape(&[d * r, dr])?)?;
            let chi = q.ncols();
            out.push(q.reshape(&[d, r, chi])?);
            cur = rr;
        }
        let n = cur.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::StateCollapse(sites.len() - 1));
        }
        cur = cur.scale_real(1.0 / n);
        if cur.shape() == l.shape() {
            diff = cur.dist_max(&l);
        }
        l = cur;
        if diff < ORTHO_TOL {
            return Ok((out, l));
        }
        last = out;
    }
    if diff < ORTHO_STALL_TOL {
        return Ok((last, l));
    }
    Err(Error::Convergence {
        iterations: ORTHO_MAX_ITER,
        residual: diff,
    })
}

impl UnitCellMps {
    /// Validates and wraps right-canonical sites and their bond spectra.
    pub fn from_parts(sites: Vec<Tensor>, lambdas: Vec<Vec<f64>>) -> Result<Self> {
        let k = sites.len();
        if k == 0 || lambdas.len() != k {
            return Err(Error::Dimension(format!(
                "{k} sites with {} bonds",
                lambdas.len()
            )));
        }
        let d = sites[0].shape()[0];
        for (i, a) in sites.iter().enumerate() {
            if a.rank() != 3 || a.shape()[0] != d {
                return Err(Error::Dimension(format!("site {i} has shape {:?}", a.shape())));
            }
            let next = &sites[(i + 1) % k];
            if a.shape()[2] != next.shape()[1] || a.shape()[2] != lambdas[i].len() {
                return Err(Error::Dimension(format!(
                    "bond {i}: site extent {} vs next {} vs lambda {}",
                    a.shape()[2],
                    next.shape()[1],
                    lambdas[i].len()
                )));
            }
        }
        Ok(UnitCellMps { d, sites, lambdas })
    }

    /// Brings arbitrary unit-cell tensors `(d, D, D')` into canonical form.
    pub fn canonicalize(raw: &[Tensor]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Dimension("empty unit cell".into()));
        }
        let k = raw.len();
        let d = raw[0].shape()[0];
        for (i, a) in raw.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite("mps tensor"));
            }
            let next = &raw[(i + 1) % k];
            if a.rank() != 3 || a.shape()[0] != d || a.shape()[2] != next.shape()[1] {
                return Err(Error::Dimension(format!("site {i} has shape {:?}", a.shape())));
            }
        }
        let (_, l) = left_orthonormalize(raw)?;
        let (rev, l_rev) = left_orthonormalize(&transpose_reverse(raw))?;
        let a_r = transpose_reverse(&rev);
        let r = l_rev.transpose();

        let center = l.matmul(&r)?;
        let t = svd_truncate(&center, usize::MAX, SCHMIDT_FLOOR)?;
        let mut lam0 = t.s;
        normalize(&mut lam0);
        let w = t.vt.dagger();
        let w_dag = t.vt;

        // B_cell = W† A_R,cell W
        let mut sites = a_r;
        sites[0] = contract(&w_dag, &sites[0], &[(1, 1)])?.permute(&[1, 0, 2])?;
        sites[k - 1] = contract(&sites[k - 1], &w, &[(2, 0)])?;
        let block = contract_sites(&sites)?.permute(&[1, 0, 2])?;
        let (sites, mut inner, _) = split_block(block, &lam0, d, k, usize::MAX, SCHMIDT_FLOOR, 0.0)?;
        inner.push(lam0);
        UnitCellMps::from_parts(sites, inner)
    }

    pub fn recanonicalize(&self) -> Result<Self> {
        UnitCellMps::canonicalize(&self.sites)
    }

    /// Drops bond directions whose Schmidt value is below `rel_floor` times
    /// the largest one on that bond, then re-canonicalises.
    pub fn truncated(&self, rel_floor: f64) -> Result<Self> {
        let k = self.k();
        let keep: Vec<Vec<usize>> = self
            .lambdas
            .iter()
            .map(|l| {
                let top = l.iter().copied().fold(0.0, f64::max);
                (0..l.len()).filter(|&j| l[j] >= rel_floor * top).collect()
            })
            .collect();
        if keep.iter().zip(&self.lambdas).all(|(kp, l)| kp.len() == l.len()) {
            return Ok(self.clone());
        }
        let raw: Vec<Tensor> = (0..k)
            .map(|i| {
                let rows = &keep[(i + k - 1) % k];
                let cols = &keep[i];
                Tensor::from_fn(&[self.d, rows.len(), cols.len()], |ix| {
                    self.sites[i].get(&[ix[0], rows[ix[1]], cols[ix[2]]])
                })
            })
            .collect();
        UnitCellMps::canonicalize(&raw)
    }

    /// Translation-invariant state from one site tensor `(d, D, D)`, repeated
    /// over a `k`-site cell. The tensor must be injective.
    pub fn from_tensor(a: &Tensor, k: usize) -> Result<Self> {
        if a.rank() != 3 || a.shape()[1] != a.shape()[2] || k == 0 {
            return Err(Error::Dimension(format!(
                "from_tensor needs (d, D, D) and k >= 1, got {:?}, k = {k}",
                a.shape()
            )));
        }
        let gap = transfer_gap(a)?;
        if gap > 1.0 - 1e-6 {
            return Err(Error::NonInjective { gap_ratio: gap });
        }
        UnitCellMps::canonicalize(&vec![a.clone(); k])
    }

    /// Product state with the same single-site vector on each of `k` sites.
    pub fn product(v: &[C64], k: usize) -> Result<Self> {
        let a = Tensor::new(vec![v.len(), 1, 1], v.to_vec())?;
        UnitCellMps::canonicalize(&vec![a; k])
    }

    /// Random complex Gaussian cell of uniform bond dimension, canonicalised.
    pub fn random<R: Rng>(d: usize, k: usize, bond: usize, rng: &mut R) -> Result<Self> {
        let raw: Vec<Tensor> = (0..k)
            .map(|_| {
                Tensor::from_fn(&[d, bond, bond], |_| {
                    C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
                })
            })
            .collect();
        UnitCellMps::canonicalize(&raw)
    }

    pub fn k(&self) -> usize {
        self.sites.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Right-canonical site tensor `B_i = Γ_i Λ_i`.
    pub fn site(&self, i: usize) -> &Tensor {
        &self.sites[i % self.k()]
    }

    pub fn sites(&self) -> &[Tensor] {
        &self.sites
    }

    /// Schmidt values on the bond to the right of site `i`.
    pub fn lambda(&self, i: usize) -> &[f64] {
        &self.lambdas[i % self.k()]
    }

    pub fn lambdas(&self) -> &[Vec<f64>] {
        &self.lambdas
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.lambdas.iter().map(Vec::len).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(0)
    }

    /// `Γ_i = B_i Λ_i^{-1}`.
    pub fn gamma(&self, i: usize) -> Tensor {
        let b = self.site(i);
        let lam = self.lambda(i);
        let dr = lam.len();
        let mut g = b.clone();
        for (n, z) in g.data_mut().iter_mut().enumerate() {
            *z /= lam[n % dr];
        }
        g
    }

    /// Largest violation of the right-orthonormality `Σ B B† = 1` and of the
    /// left fixed-point condition `Σ B† Λ² B = Λ²` over the cell.
    pub fn canonical_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for i in 0..self.k() {
            let b = self.site(i);
            let bb = contract(b, &b.conj(), &[(0, 0), (2, 2)]).unwrap();
            err = err.max(bb.dist_max(&Tensor::identity(bb.nrows())));
            let ll: Vec<C64> = self
                .lambda(i + self.k() - 1)
                .iter()
                .map(|x| C64::new(x * x, 0.0))
                .collect();
            let left = contract(&Tensor::diag(&ll), b, &[(1, 1)]).unwrap();
            let fixed = contract(&b.conj(), &left, &[(0, 1), (1, 0)]).unwrap();
            let want: Vec<C64> = self.lambda(i).iter().map(|x| C64::new(x * x, 0.0)).collect();
            err = err.max(fixed.dist_max(&Tensor::diag(&want)));
        }
        err
    }

    /// Squared Schmidt values across `bond`, descending.
    pub fn entanglement_spectrum(&self, bond: usize) -> Vec<f64> {
        self.lambda(bond).iter().map(|s| s * s).collect()
    }

    /// PBC trace of `n_cells` copies of the cell as a dense unit vector.
    pub fn to_finite_vector(&self, n_cells: usize) -> Result<FiniteMpsVector> {
        let n = n_cells * self.k();
        if n == 0 || n > FINITE_MAX_SITES {
            return Err(Error::Capacity(format!(
                "{n} sites requested, dense vectors hold at most {FINITE_MAX_SITES}"
            )));
        }
        let d0 = self.lambda(self.k() - 1).len();
        let chain: Vec<Tensor> = (0..n).map(|i| self.site(i).clone()).collect();
        let block = contract_sites(&chain)?;
        let dim = self.d.pow(n as u32);
        let mut amps = vec![ZERO; dim];
        for (s, amp) in amps.iter_mut().enumerate() {
            *amp = (0..d0).map(|a| block.get(&[s, a, a])).sum();
        }
        FiniteMpsVector::new(n, self.d, amps)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MPS_MAGIC)?;
        w.write_all(&MPS_VERSION.to_le_bytes())?;
        w.write_all(&(self.d as u64).to_le_bytes())?;
        w.write_all(&(self.k() as u64).to_le_bytes())?;
        for (a, lam) in self.sites.iter().zip(&self.lambdas) {
            for &e in a.shape() {
                w.write_all(&(e as u64).to_le_bytes())?;
            }
            for z in a.data() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
            w.write_all(&(lam.len() as u64).to_le_bytes())?;
            for x in lam {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MPS_MAGIC {
            return Err(Error::Format("not an MPS dump (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != MPS_VERSION {
            return Err(Error::Format(format!("unsupported MPS dump version {version}")));
        }
        let d = read_u64(r)? as usize;
        let k = read_u64(r)? as usize;
        if k == 0 || k > 1 << 16 {
            return Err(Error::Format(format!("implausible unit cell {k}")));
        }
        let mut sites = Vec::with_capacity(k);
        let mut lambdas = Vec::with_capacity(k);
        for _ in 0..k {
            let shape = vec![read_u64(r)? as usize, read_u64(r)? as usize, read_u64(r)? as usize];
            let n: usize = shape.iter().product();
            if shape[0] != d || n > 1 << 28 {
                return Err(Error::Format(format!("bad site shape {shape:?}")));
            }
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(C64::new(read_f64(r)?, read_f64(r)?));
            }
            sites.push(Tensor::new(shape, data)?);
            let len = read_u64(r)? as usize;
            if len > 1 << 20 {
                return Err(Error::Format(format!("bad bond length {len}")));
            }
            lambdas.push((0..len).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?);
        }
        UnitCellMps::from_parts(sites, lambdas)
    }
}

const MPS_MAGIC: &[u8; 8] = b"CSPTMPS\0";
const MPS_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Ratio |λ₂|/|λ₁| of the single-tensor transfer map `X -> Σ A X A†`.
pub fn transfer_gap(a: &Tensor) -> Result<f64> {
    let dim = a.shape()[1];
    if dim == 1 {
        return Ok(0.0);
    }
    let ac = a.conj();
    let op = |v: &[C64]| -> Vec<C64> {
        let x = Tensor::new(vec![dim, dim], v.to_vec()).unwrap();
        let ax = contract(a, &x, &[(2, 0)]).unwrap();
        contract(&ax, &ac, &[(0, 0), (2, 2)]).unwrap().into_data()
    };
    Ok(dominant_eigenpair(op, dim * dim, 1e-12, 500)?.gap_ratio)
}

/// Dense state vector over `n` sites, used to cross-check against exact
/// diagonalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMpsVector {
    pub n: usize,
    pub d: usize,
    pub amplitudes: Vec<C64>,
}

impl FiniteMpsVector {
    /// Normalises `amplitudes` to unit 2-norm.
    pub fn new(n: usize, d: usize, mut amplitudes: Vec<C64>) -> Result<Self> {
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Dimension("finite state vector has zero norm".into()));
        }
        amplitudes.iter_mut().for_each(|z| *z /= norm);
        Ok(FiniteMpsVector { n, d, amplitudes })
    }

    /// `<self|other>`.
    pub fn overlap(&self, other: &[C64]) -> C64 {
        self.amplitudes
            .iter()
            .zip(other)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

/// Relative modulus window inside which mixed transfer eigenvalues count as
/// one quasi-degenerate dominant cluster.
pub const SECTOR_WINDOW: f64 = 1e-3;
const MAX_SECTORS: usize = 4;

/// One eigen-sector of the mixed transfer map: paired left and right
/// eigenvectors `(D_L, D_R)` of unit Frobenius norm.
#[derive(Clone, Debug)]
pub struct MixedSector {
    pub sigma_left: Tensor,
    pub sigma_right: Tensor,
    pub rate: C64,
}

/// Dominant eigen-data of the unit-cell mixed transfer map built from
/// `conj(left)` and `right`, at the bond left of site 0.
#[derive(Clone, Debug)]
pub struct MixedFixedPoints {
    /// Sectors whose eigenvalue modulus is within [`SECTOR_WINDOW`] of the
    /// largest, dominant first.
    pub sectors: Vec<MixedSector>,
    /// Dominant eigenvalue: per-cell fidelity density.
    pub overlap_rate: C64,
    /// Modulus of the first eigenvalue outside the cluster over the dominant one.
    pub gap_ratio: f64,
    /// More than one sector in the dominant cluster.
    pub degenerate: bool,
}

impl MixedFixedPoints {
    pub fn dominant(&self) -> &MixedSector {
        &self.sectors[0]
    }
}

fn check_compatible(left: &UnitCellMps, right: &UnitCellMps) -> Result<()> {
    if left.k() != right.k() || left.d != right.d {
        return Err(Error::Dimension(format!(
            "left (k={}, d={}) and right (k={}, d={}) states differ",
            left.k(),
            left.d,
            right.k(),
            right.d
        )));
    }
    Ok(())
}

/// `Y <- Σ_s B_L^s† Y B_R^s`.
fn push_left(y: &Tensor, bl: &Tensor, br: &Tensor) -> Tensor {
    let yr = contract(y, br, &[(1, 1)]).unwrap(); // (Dl_L, d, Dr_R)
    contract(&bl.conj(), &yr, &[(0, 1), (1, 0)]).unwrap()
}

/// `X <- Σ_s conj(B_L^s) X B_R^sᵀ`.
fn push_right(x: &Tensor, bl: &Tensor, br: &Tensor) -> Tensor {
    let xr = contract(br, x, &[(2, 1)]).unwrap(); // (d, Dl_R, Dr_L)
    contract(&bl.conj(), &xr, &[(0, 0), (2, 2)]).unwrap()
}

fn bilinear(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Leading sectors of the mixed transfer map. The left and right maps are
/// transposes of each other under the bilinear pairing `Σ Y_ij X_ij`, so each
/// found sector is removed from both by biorthogonal deflation before the
/// next one is sought.
pub fn mixed_transfer_fixed_points(
    left: &UnitCellMps,
    right: &UnitCellMps,
) -> Result<MixedFixedPoints> {
    check_compatible(left, right)?;
    let k = left.k();
    let dl = left.lambda(k - 1).len();
    let dr = right.lambda(k - 1).len();
    let n = dl * dr;
    let left_op = |v: &[C64]| -> Vec<C64> {
        let mut y = Tensor::new(vec![dl, dr], v.to_vec()).unwrap();
        for i in 0..k {
            y = push_left(&y, left.site(i), right.site(i));
        }
        y.into_data()
    };
    let right_op = |v: &[C64]| -> Vec<C64> {
        let mut x = Tensor::new(vec![dl, dr], v.to_vec()).unwrap();
        for i in (0..k).rev() {
            x = push_right(&x, left.site(i), right.site(i));
        }
        x.into_data()
    };

    // (rate, y, x, <y, x>) of the sectors found so far
    let mut found: Vec<(C64, Vec<C64>, Vec<C64>, C64)> = Vec::new();
    let mut gap_ratio = 0.0;
    while found.len() < MAX_SECTORS && found.len() < n {
        let deflated = |op: &dyn Fn(&[C64]) -> Vec<C64>, v: &[C64], from_left: bool| {
            let mut w = op(v);
            for (mu, y, x, yx) in &found {
                let (keep, probe) = if from_left { (y, x) } else { (x, y) };
                let c = *mu * bilinear(probe, v) / yx;
                w.iter_mut().zip(keep).for_each(|(a, b)| *a -= c * b);
            }
            w
        };
        let ly = dominant_eigenpair(|v| deflated(&left_op, v, true), n, 1e-12, 2000)?;
        let rx = dominant_eigenpair(|v| deflated(&right_op, v, false), n, 1e-12, 2000)?;
        if let Some((lead, ..)) = found.first() {
            let ratio = rx.value.norm() / lead.norm();
            if ratio < 1.0 - SECTOR_WINDOW {
                gap_ratio = ratio;
                break;
            }
        } else if rx.gap_ratio < 1.0 - SECTOR_WINDOW {
            // no candidate partner: skip the extra deflation pass
            let yx = bilinear(&ly.vector, &rx.vector);
            gap_ratio = ly.gap_ratio.max(rx.gap_ratio);
            found.push((rx.value, ly.vector, rx.vector, yx));
            break;
        }
        let yx = bilinear(&ly.vector, &rx.vector);
        if yx.norm() < 1e-12 {
            return Err(Error::Biorthogonality(yx.norm()));
        }
        found.push((rx.value, ly.vector, rx.vector, yx));
    }
    if found.len() > 1 {
        log::warn!(
            "{} quasi-degenerate mixed transfer sectors (|mu| {:?})",
            found.len(),
            found.iter().map(|f| f.0.norm()).collect::<Vec<_>>()
        );
    }
    let sectors = found
        .into_iter()
        .map(|(rate, y, x, _)| {
            Ok(MixedSector {
                sigma_left: Tensor::new(vec![dl, dr], y)?,
                sigma_right: Tensor::new(vec![dl, dr], x)?,
                rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MixedFixedPoints {
        overlap_rate: sectors[0].rate,
        degenerate: sectors.len() > 1,
        sectors,
        gap_ratio,
    })
}

fn pair_contract(y: &Tensor, x: &Tensor) -> C64 {
    bilinear(y.data(), x.data())
}

/// Biorthogonal expectation density `<L|O|R> / <L|R>` of a local operator,
/// averaged over the `k` placements inside the unit cell and with equal
/// weight over the dominant transfer sectors.
pub fn measure_local(left: &UnitCellMps, right: &UnitCellMps, op: &LocalTerm) -> Result<C64> {
    let fp = mixed_transfer_fixed_points(left, right)?;
    measure_with(left, right, &fp, op)
}

/// As [`measure_local`] with precomputed fixed points.
pub fn measure_with(
    left: &UnitCellMps,
    right: &UnitCellMps,
    fp: &MixedFixedPoints,
    op: &LocalTerm,
) -> Result<C64> {
    check_compatible(left, right)?;
    let k = left.k();
    let span = op.span;
    if span == 0 || span > k {
        return Err(Error::Dimension(format!(
            "operator spans {span} sites, unit cell has {k}"
        )));
    }
    let d = left.d;
    let dim = d.pow(span as u32);
    if op.matrix.shape() != [dim, dim] {
        return Err(Error::Dimension(format!(
            "operator matrix {:?} for span {span}",
            op.matrix.shape()
        )));
    }
    let mut total = ZERO;
    for sector in &fp.sectors {
        total += measure_sector(left, right, sector, op, dim)?;
    }
    Ok(total / fp.sectors.len() as f64)
}

fn measure_sector(
    left: &UnitCellMps,
    right: &UnitCellMps,
    fp: &MixedSector,
    op: &LocalTerm,
    dim: usize,
) -> Result<C64> {
    let k = left.k();
    let span = op.span;
    let overlap = pair_contract(&fp.sigma_left, &fp.sigma_right);
    if overlap.norm() < 1e-12 {
        return Err(Error::Biorthogonality(overlap.norm()));
    }

    let mut total = ZERO;
    for a in 0..k {
        let mut y = fp.sigma_left.clone();
        for i in 0..a {
            y = push_left(&y, left.site(i), right.site(i));
        }
        let last = a + span - 1;
        let cell_end = (last / k + 1) * k - 1;
        let mut x = fp.sigma_right.clone();
        for g in ((last + 1)..=cell_end).rev() {
            x = push_right(&x, left.site(g), right.site(g));
        }
        let tl = contract_sites(&(a..=last).map(|g| left.site(g).clone()).collect::<Vec<_>>())?;
        let tr = contract_sites(&(a..=last).map(|g| right.site(g).clone()).collect::<Vec<_>>())?;
        let (rl, rr) = (tr.shape()[1], tr.shape()[2]);
        let tr_op = op
            .matrix
            .matmul(&tr.clone().reshape(&[dim, rl * rr])?)?
            .reshape(&[dim, rl, rr])?;

        let close = |t: &Tensor| -> Result<C64> {
            let yt = contract(&y, t, &[(1, 1)])?; // (Dl_L, dim, Dr_R)
            let g = contract(&tl.conj(), &yt, &[(0, 1), (1, 0)])?; // (Dr_L, Dr_R)
            Ok(pair_contract(&g, &x))
        };
        let num = close(&tr_op)?;
        let den = close(&tr)?;
        if den.norm() < 1e-300 {
            return Err(Error::Biorthogonality(den.norm()));
        }
        total += num / den;
    }
    Ok(total / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ONE;
    use crate::symmetry::{catalog_state, StateName};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn aklt(k: usize) -> UnitCellMps {
        UnitCellMps::from_tensor(&catalog_state(StateName::Psi0).tensor(), k).unwrap()
    }

    fn zero_product(k: usize) -> UnitCellMps {
        UnitCellMps::product(&[ZERO, ONE, ZERO], k).unwrap()
    }

    fn term(span: usize, matrix: Tensor) -> LocalTerm {
        LocalTerm {
            span,
            matrix,
            tag: "test".into(),
        }
    }

    #[test]
    fn aklt_has_flat_spectrum() {
        let s = aklt(4);
        for b in 0..4 {
            let es = s.entanglement_spectrum(b);
            assert_eq!(es.len(), 2);
            assert!((es[0] - 0.5).abs() < 1e-12 && (es[1] - 0.5).abs() < 1e-12);
        }
        assert!(s.canonical_error() < 1e-10);
    }

    #[test]
    fn product_state_spectrum() {
        let s = zero_product(4);
        assert_eq!(s.entanglement_spectrum(2), vec![1.0]);
    }

    #[test]
    fn phases_do_not_change_schmidt_values() {
        let s = UnitCellMps::from_tensor(&catalog_state(StateName::PsiX).tensor(), 4).unwrap();
        for b in 0..4 {
            assert!(s.lambda(b).iter().all(|x| (x - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12));
        }
    }

    #[test]
    fn non_injective_tensor_rejected() {
        // block-diagonal tensor: two decoupled sectors
        let a = Tensor::from_fn(&[3, 2, 2], |ix| if ix[1] == ix[2] && ix[0] == 1 { ONE } else { ZERO });
        assert!(matches!(
            UnitCellMps::from_tensor(&a, 2),
            Err(Error::NonInjective { .. })
        ));
    }

    #[test]
    fn canonicalization_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = UnitCellMps::random(3, 4, 6, &mut rng).unwrap();
        assert!(s.canonical_error() < 1e-8);
        let t = s.recanonicalize().unwrap();
        for b in 0..4 {
            assert_eq!(s.lambda(b).len(), t.lambda(b).len());
            for (x, y) in s.lambda(b).iter().zip(t.lambda(b)) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn spectrum_is_gauge_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = UnitCellMps::random(3, 2, 5, &mut rng).unwrap();
        let g: Tensor = Tensor::from_fn(&[5, 5], |ix| {
            let base = if ix[0] == ix[1] { 2.0 } else { 0.0 };
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(base + 0.3 * re, 0.3 * im)
        });
        let ginv = crate::linalg::inverse(&g).unwrap();
        let mut raw: Vec<Tensor> = s.sites().to_vec();
        raw[0] = contract(&raw[0], &g, &[(2, 0)]).unwrap();
        raw[1] = contract(&ginv, &raw[1], &[(1, 1)]).unwrap().permute(&[1, 0, 2]).unwrap();
        let t = UnitCellMps::canonicalize(&raw).unwrap();
        for b in 0..2 {
            let (x, y) = (s.entanglement_spectrum(b), t.entanglement_spectrum(b));
            assert_eq!(x.len(), y.len());
            for (p, q) in x.iter().zip(&y) {
                assert!((p - q).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn self_overlap_rate_is_one() {
        let s = aklt(4);
        let fp = mixed_transfer_fixed_points(&s, &s).unwrap();
        assert!((fp.overlap_rate - ONE).norm() < 1e-10);
        // identity fixed points up to normalisation
        let y = &fp.dominant().sigma_left;
        let ratio = y.get(&[0, 0]);
        assert!(y.dist_max(&Tensor::identity(2).scale(ratio)) < 1e-10);
    }

    #[test]
    fn aklt_product_overlap_rate_below_one() {
        let fp = mixed_transfer_fixed_points(&aklt(2), &zero_product(2)).unwrap();
        assert!(fp.overlap_rate.norm() < 1.0 - 1e-3);
    }

    #[test]
    fn psix_psi0_fixed_points_exist() {
        let x = UnitCellMps::from_tensor(&catalog_state(StateName::PsiX).tensor(), 4).unwrap();
        let fp = mixed_transfer_fixed_points(&x, &aklt(4)).unwrap();
        // per site the mixed transfer has Bell-basis eigenvalues (±2 - i, i, i)/3
        let want = (5f64.sqrt() / 3.0).powi(4);
        assert!((fp.overlap_rate.norm() - want).abs() < 1e-10);
        assert!(fp.degenerate);
        // the cluster is the conjugate pair (-7 ∓ 24i)/81
        assert_eq!(fp.sectors.len(), 2);
        let mut rates: Vec<C64> = fp.sectors.iter().map(|s| s.rate * 81.0).collect();
        rates.sort_by(|a, b| a.im.total_cmp(&b.im));
        assert!((rates[0] - C64::new(-7.0, -24.0)).norm() < 1e-8);
        assert!((rates[1] - C64::new(-7.0, 24.0)).norm() < 1e-8);
        assert!(fp.gap_ratio < 1.0 - SECTOR_WINDOW);
    }

    #[test]
    fn sectors_are_biorthogonal() {
        let x = UnitCellMps::from_tensor(&catalog_state(StateName::PsiX).tensor(), 4).unwrap();
        let fp = mixed_transfer_fixed_points(&x, &aklt(4)).unwrap();
        let (a, b) = (&fp.sectors[0], &fp.sectors[1]);
        assert!(pair_contract(&a.sigma_left, &b.sigma_right).norm() < 1e-8);
        assert!(pair_contract(&b.sigma_left, &a.sigma_right).norm() < 1e-8);
    }

    #[test]
    fn measurements() {
        let p = zero_product(4);
        let sz2 = crate::symmetry::spin1_matrices().sz2;
        assert!(measure_local(&p, &p, &term(1, sz2.clone())).unwrap().norm() < 1e-14);

        let s = aklt(4);
        let id = measure_local(&s, &s, &term(2, Tensor::identity(9))).unwrap();
        assert!((id - ONE).norm() < 1e-12);
        // AKLT: <Sz^2> = 2/3
        let v = measure_local(&s, &s, &term(1, sz2)).unwrap();
        assert!((v - C64::new(2.0 / 3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn hermitian_measurement_is_real() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = UnitCellMps::random(3, 4, 4, &mut rng).unwrap();
        let a = Tensor::from_fn(&[9, 9], |_| C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)));
        let h = a.add(&a.dagger()).unwrap();
        let v = measure_local(&s, &s, &term(2, h)).unwrap();
        assert!(v.im.abs() < 1e-10);
    }

    #[test]
    fn finite_vectors() {
        let p = zero_product(2).to_finite_vector(2).unwrap();
        let mut want = vec![ZERO; 81];
        want[1 + 3 + 9 + 27] = ONE;
        assert!(p.overlap(&want).norm() > 1.0 - 1e-14);

        let x = UnitCellMps::from_tensor(&catalog_state(StateName::PsiX).tensor(), 4)
            .unwrap()
            .to_finite_vector(1)
            .unwrap();
        let z = aklt(4).to_finite_vector(1).unwrap();
        let norm: f64 = x.amplitudes.iter().map(|a| a.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(x.overlap(&z.amplitudes).norm() < 1.0 - 1e-6);
        assert!(matches!(aklt(4).to_finite_vector(4), Err(Error::Capacity(_))));
    }

    #[test]
    fn dump_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = UnitCellMps::random(3, 4, 3, &mut rng).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let t = UnitCellMps::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(s, t);
        buf[0] = b'X';
        assert!(matches!(UnitCellMps::read_from(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
