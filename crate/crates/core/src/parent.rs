//! Non-Hermitian parent Hamiltonians of MPS pairs and the interpolated model
//! `H(λ, U) = Σ_i [(1-λ) Π₀₀ + λ Πₓ₀]_i + U Σ_i (Sᶻ_i)²`.
//!
//! For a left/right pair with block maps `T̂_L`, `T̂_R` the local projector is
//! `P̂ = T̂_R Ĝ⁻¹ T̂_L†` with metric `Ĝ = T̂_L† T̂_R`, and the local term is
//! `Π = 1 - P̂`. The right state is a zero mode of `H`, the left one of `H†`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{adjoint_matmul, pseudo_inverse, ConditionReport, DEFAULT_REL_CUTOFF};
use crate::mps::contract_sites;
use crate::symmetry::{catalog_state, spin1_matrices, StateName, SPIN1_DIM};
use crate::tensor::{Tensor, C64, ZERO};

/// Block length of every parent term of the model.
pub const PARENT_SPAN: usize = 4;

const DENSE_MAX_SITES: usize = 8;

/// An operator on `span` consecutive sites, `d^span x d^span`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTerm {
    pub span: usize,
    pub matrix: Tensor,
    pub tag: String,
}

impl LocalTerm {
    pub fn new(span: usize, matrix: Tensor, tag: impl Into<String>) -> Result<Self> {
        if span == 0 || matrix.rank() != 2 || matrix.nrows() != matrix.ncols() {
            return Err(Error::Dimension(format!(
                "local term of span {span} with matrix {:?}",
                matrix.shape()
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::NonFinite("local term"));
        }
        Ok(LocalTerm {
            span,
            matrix,
            tag: tag.into(),
        })
    }

    pub fn dagger(&self) -> LocalTerm {
        LocalTerm {
            span: self.span,
            matrix: self.matrix.dagger(),
            tag: format!("({})†", self.tag),
        }
    }

    pub fn scaled(&self, s: f64) -> LocalTerm {
        LocalTerm {
            span: self.span,
            matrix: self.matrix.scale_real(s),
            tag: format!("{s}·{}", self.tag),
        }
    }
}

/// `T̂[(i₁..i_k), (α, β)] = (A^{i₁} ⋯ A^{i_k})_{αβ}`, a `d^k x D²` matrix.
pub fn block_transfer(a: &Tensor, k: usize) -> Result<Tensor> {
    if k == 0 || a.rank() != 3 {
        return Err(Error::Dimension(format!(
            "block_transfer of {:?} with k = {k}",
            a.shape()
        )));
    }
    let block = contract_sites(&vec![a.clone(); k])?;
    let (p, dl, dr) = (block.shape()[0], block.shape()[1], block.shape()[2]);
    block.reshape(&[p, dl * dr])
}

/// `Ĝ = T̂_L† T̂_R`.
pub fn metric(tl: &Tensor, tr: &Tensor) -> Result<Tensor> {
    adjoint_matmul(tl, tr)
}

#[derive(Clone, Debug)]
pub struct Projector {
    pub p: Tensor,
    pub condition: ConditionReport,
}

/// `P̂ = T̂_R Ĝ⁺ T̂_L†`; fails unless the metric has full rank at `rel_cutoff`.
pub fn local_projector(tl: &Tensor, tr: &Tensor, rel_cutoff: f64) -> Result<Projector> {
    let g = metric(tl, tr)?;
    let (ginv, condition) = pseudo_inverse(&g, rel_cutoff)?;
    if !condition.is_full_rank() {
        return Err(Error::SingularMetric(condition));
    }
    if condition.ambiguous {
        log::warn!(
            "metric conditioning is close to the cutoff (sigma_min/sigma_max = {:.3e})",
            condition.sigma_min / condition.sigma_max
        );
    }
    let p = tr.matmul(&ginv)?.matmul(&tl.dagger())?;
    Ok(Projector { p, condition })
}

/// `Π = 1 - P̂` for the pair (left, right) of site tensors in the Sz basis.
pub fn parent_term(
    left: &Tensor,
    right: &Tensor,
    k: usize,
    tag: impl Into<String>,
) -> Result<(LocalTerm, ConditionReport)> {
    let tl = block_transfer(left, k)?;
    let tr = block_transfer(right, k)?;
    let proj = local_projector(&tl, &tr, DEFAULT_REL_CUTOFF)?;
    let pi = Tensor::identity(proj.p.nrows()).sub(&proj.p)?;
    Ok((LocalTerm::new(k, pi, tag)?, proj.condition))
}

/// The model `H(λ, U)` in terms of its local pieces.
#[derive(Clone, Debug)]
pub struct HamiltonianSpec {
    pub lambda: f64,
    pub u_strength: f64,
    pub k: usize,
    /// `Π` of the pair (ψ₀, ψ₀).
    pub term_00: LocalTerm,
    /// `Π` of the pair (ψx left, ψ₀ right).
    pub term_x0: LocalTerm,
    /// `(Sᶻ)²`, unscaled.
    pub onsite: LocalTerm,
    pub condition_00: ConditionReport,
    pub condition_x0: ConditionReport,
}

impl HamiltonianSpec {
    /// `h(λ) = (1-λ) Π₀₀ + λ Πₓ₀`, the `k`-site term placed at every site.
    pub fn local_term(&self) -> LocalTerm {
        let m = self
            .term_00
            .matrix
            .scale_real(1.0 - self.lambda)
            .add(&self.term_x0.matrix.scale_real(self.lambda))
            .expect("terms share a span");
        LocalTerm {
            span: self.k,
            matrix: m,
            tag: format!("h(lambda={})", self.lambda),
        }
    }

    /// `U (Sᶻ)²`.
    pub fn onsite_term(&self) -> LocalTerm {
        LocalTerm {
            span: 1,
            matrix: self.onsite.matrix.scale_real(self.u_strength),
            tag: format!("U(Sz)^2 (U={})", self.u_strength),
        }
    }

    /// The model with every local term replaced by its adjoint.
    pub fn adjoint(&self) -> HamiltonianSpec {
        HamiltonianSpec {
            term_00: self.term_00.dagger(),
            term_x0: self.term_x0.dagger(),
            onsite: self.onsite.dagger(),
            ..self.clone()
        }
    }

    pub fn terms(&self) -> Vec<LocalTerm> {
        vec![self.local_term(), self.onsite_term()]
    }
}

pub fn hamiltonian_spec(lambda: f64, u_strength: f64) -> Result<HamiltonianSpec> {
    hamiltonian_spec_with_span(lambda, u_strength, PARENT_SPAN)
}

pub fn hamiltonian_spec_with_span(lambda: f64, u_strength: f64, k: usize) -> Result<HamiltonianSpec> {
    if !lambda.is_finite() || !u_strength.is_finite() {
        return Err(Error::NonFinite("hamiltonian parameters"));
    }
    if !(0.0..=1.0).contains(&lambda) || u_strength < 0.0 {
        log::warn!("(lambda, U) = ({lambda}, {u_strength}) lies outside [0, 1] x [0, inf)");
    }
    let psi0 = catalog_state(StateName::Psi0).tensor();
    let psix = catalog_state(StateName::PsiX).tensor();
    let (term_00, condition_00) = parent_term(&psi0, &psi0, k, "Pi(psi0, psi0)")?;
    let (term_x0, condition_x0) = parent_term(&psix, &psi0, k, "Pi(psix, psi0)")?;
    let onsite = LocalTerm::new(1, spin1_matrices().sz2, "(Sz)^2")?;
    Ok(HamiltonianSpec {
        lambda,
        u_strength,
        k,
        term_00,
        term_x0,
        onsite,
        condition_00,
        condition_x0,
    })
}

/// A sum of local terms placed at every site of an `n`-site chain.
#[derive(Clone, Debug)]
pub struct ChainOperator {
    pub n: usize,
    pub d: usize,
    pub pbc: bool,
    pub terms: Vec<LocalTerm>,
    placements: Vec<Placement>,
}

#[derive(Clone, Debug)]
struct Placement {
    term: usize,
    /// Weight `d^(n-1-site)` of each covered site.
    weights: Vec<usize>,
    /// Linear offset of each local configuration.
    offsets: Vec<usize>,
}

impl ChainOperator {
    pub fn new(terms: Vec<LocalTerm>, n: usize, d: usize, pbc: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::Dimension("empty chain".into()));
        }
        let weight = |site: usize| d.pow((n - 1 - site) as u32);
        let mut placements = Vec::new();
        for (t, term) in terms.iter().enumerate() {
            let m = term.span;
            let local_dim = d.pow(m as u32);
            if term.matrix.nrows() != local_dim {
                return Err(Error::Dimension(format!(
                    "term {} has matrix {:?}, expected {local_dim}",
                    term.tag,
                    term.matrix.shape()
                )));
            }
            if m > n {
                return Err(Error::Dimension(format!("term span {m} exceeds {n} sites")));
            }
            let starts = if pbc { n } else { n + 1 - m };
            for a in 0..starts {
                let weights: Vec<usize> = (0..m).map(|j| weight((a + j) % n)).collect();
                let offsets = (0..local_dim)
                    .map(|l| {
                        let mut rem = l;
                        let mut off = 0;
                        for j in (0..m).rev() {
                            off += (rem % d) * weights[j];
                            rem /= d;
                        }
                        off
                    })
                    .collect();
                placements.push(Placement {
                    term: t,
                    weights,
                    offsets,
                });
            }
        }
        Ok(ChainOperator {
            n,
            d,
            pbc,
            terms,
            placements,
        })
    }

    pub fn from_spec(spec: &HamiltonianSpec, n: usize, pbc: bool) -> Result<Self> {
        ChainOperator::new(spec.terms(), n, SPIN1_DIM, pbc)
    }

    pub fn dim(&self) -> usize {
        self.d.pow(self.n as u32)
    }

    pub fn adjoint(&self) -> ChainOperator {
        ChainOperator {
            terms: self.terms.iter().map(LocalTerm::dagger).collect(),
            ..self.clone()
        }
    }

    /// Calls `f(row, col, value)` for every nonzero contribution.
    fn for_each_entry(&self, mut f: impl FnMut(usize, usize, C64)) {
        let d = self.d;
        for pl in &self.placements {
            let h = &self.terms[pl.term].matrix;
            let ld = h.nrows();
            for s in 0..self.dim() {
                let mut local = 0;
                for &w in &pl.weights {
                    local = local * d + (s / w) % d;
                }
                let base = s - pl.offsets[local];
                for (lp, &off) in pl.offsets.iter().enumerate() {
                    let v = h.data()[lp * ld + local];
                    if v != ZERO {
                        f(base + off, s, v);
                    }
                }
            }
        }
    }

    /// `H v` without forming `H`.
    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "vector of length {} for a {}-dimensional chain",
                v.len(),
                self.dim()
            )));
        }
        let mut out = vec![ZERO; v.len()];
        self.for_each_entry(|r, c, h| out[r] += h * v[c]);
        Ok(out)
    }

    pub fn dense(&self) -> Result<Tensor> {
        if self.n > DENSE_MAX_SITES {
            return Err(Error::Capacity(format!(
                "dense assembly holds at most {DENSE_MAX_SITES} sites, got {}",
                self.n
            )));
        }
        let dim = self.dim();
        let mut m = Tensor::zeros(&[dim, dim]);
        let data = m.data_mut();
        self.for_each_entry(|r, c, h| data[r * dim + c] += h);
        Ok(m)
    }
}

/// Dense `H(λ, U)` on `n` sites.
pub fn assemble_dense(spec: &HamiltonianSpec, n: usize, pbc: bool) -> Result<Tensor> {
    ChainOperator::from_spec(spec, n, pbc)?.dense()
}

#[derive(Serialize)]
struct TermDump<'a> {
    tag: &'a str,
    span: usize,
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    condition: Option<&'a ConditionReport>,
}

fn term_dump<'a>(t: &'a LocalTerm, condition: Option<&'a ConditionReport>) -> TermDump<'a> {
    TermDump {
        tag: &t.tag,
        span: t.span,
        rows: t.matrix.nrows(),
        cols: t.matrix.ncols(),
        re: t.matrix.data().iter().map(|z| z.re).collect(),
        im: t.matrix.data().iter().map(|z| z.im).collect(),
        condition,
    }
}

/// JSON dump of the local terms of `spec` (row-major real and imaginary parts).
pub fn dump_terms(spec: &HamiltonianSpec) -> Result<String> {
    let local = spec.local_term();
    let onsite = spec.onsite_term();
    let dumps = vec![
        term_dump(&spec.term_00, Some(&spec.condition_00)),
        term_dump(&spec.term_x0, Some(&spec.condition_x0)),
        term_dump(&local, None),
        term_dump(&onsite, None),
    ];
    Ok(serde_json::to_string_pretty(&dumps)?)
}

/// `<v| H |v>`-style helper: `v† w`.
pub fn inner(v: &[C64], w: &[C64]) -> C64 {
    v.iter().zip(w).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm(v: &[C64]) -> f64 {
    inner(v, v).re.sqrt()
}
