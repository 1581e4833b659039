//! SPT indices of D2 x time-reversal symmetric MPS.
//!
//! A unit cell is blocked into one translation-invariant super-site. For a
//! unitary element the mixed transfer map `X -> Σ_i Ã^i X A^i†` with
//! `Ã^i = Σ_j u_ij A^j = α R⁻¹ A^i R` has `R⁻¹` as its dominant eigenvector
//! and `α` as eigenvalue; time reversal is handled the same way with `conj(A)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dominant_eigenpair, inverse};
use crate::mps::{contract_sites, transfer_gap, UnitCellMps};
use crate::symmetry::{group_action, GroupElement, SymmetryAction};
use crate::tensor::{contract, Tensor, C64, ONE};

/// A raw index farther than this from ±1 is indeterminate.
pub const ROUNDING_TOL: f64 = 1e-4;
/// Largest allowed deviation of an index matrix from a multiple of identity.
pub const SCALAR_TOL: f64 = 1e-6;
/// Leading entanglement doublet counts as degenerate below this relative split.
pub const DOUBLET_TOL: f64 = 1e-6;

const SYMMETRY_TOL: f64 = 1e-6;
const EIG_TOL: f64 = 1e-12;
/// Relative Schmidt floors tried in turn: bond directions below the floor are
/// dropped before extraction. A larger floor is used only when a symmetry
/// check fails, which happens when the bond cap leaves an unpaired tail value.
pub const EXTRACTION_FLOORS: [f64; 4] = [1e-6, 1e-5, 1e-4, 1e-3];
const EIG_MAX_CYCLES: usize = 2000;

/// Rounded indices `(ω, β, γ(gx), γ(gz))`; 0 marks an indeterminate entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexSigns {
    pub omega: i8,
    pub beta: i8,
    pub gamma_gx: i8,
    pub gamma_gz: i8,
}

impl IndexSigns {
    pub const fn new(omega: i8, beta: i8, gamma_gx: i8, gamma_gz: i8) -> Self {
        IndexSigns {
            omega,
            beta,
            gamma_gx,
            gamma_gz,
        }
    }

    /// `(ω, γ(gz), γ(gx))`, the triple used to tell phases apart.
    pub fn phase_triple(&self) -> (i8, i8, i8) {
        (self.omega, self.gamma_gz, self.gamma_gx)
    }
}

impl fmt::Display for IndexSigns {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = |v: i8| match v {
            1 => "+1",
            -1 => "-1",
            _ => "?",
        };
        write!(
            f,
            "({}, {}, {}, {})",
            s(self.omega),
            s(self.beta),
            s(self.gamma_gx),
            s(self.gamma_gz)
        )
    }
}

/// A raw index value together with its rounding diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexValue {
    /// `tr(C) / D` of the index matrix `C`.
    pub raw: C64,
    /// `max |C - raw·1|`.
    pub scalar_deviation: f64,
    /// Distance from `raw` to the rounded sign.
    pub distance: f64,
    /// ±1, or 0 if indeterminate.
    pub sign: i8,
}

impl IndexValue {
    pub fn from_matrix(c: &Tensor) -> Self {
        let n = c.nrows();
        let raw = c.trace() / n as f64;
        let scalar_deviation = c.dist_max(&Tensor::identity(n).scale(raw));
        let nearest = if raw.re >= 0.0 { 1 } else { -1 };
        let distance = (raw - C64::new(nearest as f64, 0.0)).norm();
        let sign = if scalar_deviation <= SCALAR_TOL && distance <= ROUNDING_TOL {
            nearest
        } else {
            0
        };
        IndexValue {
            raw,
            scalar_deviation,
            distance,
            sign,
        }
    }

    pub fn is_determinate(&self) -> bool {
        self.sign != 0
    }
}

/// Bond representation of a unitary element.
#[derive(Clone, Debug)]
pub struct UnitaryExtraction {
    pub alpha: C64,
    /// Unitary, phase-fixed so that `R² = 1`.
    pub r: Tensor,
    /// `|λ₂/λ₁|` of the mixed transfer map.
    pub dominance: f64,
    pub unitarity_error: f64,
}

/// Bond representation of time reversal.
#[derive(Clone, Debug)]
pub struct AntiunitaryExtraction {
    pub alpha: C64,
    /// Normalised so that `M conj(M) = ±1`.
    pub m: Tensor,
    pub dominance: f64,
}

#[derive(Clone, Debug)]
pub struct ExtractionResult {
    pub gx: UnitaryExtraction,
    pub gz: UnitaryExtraction,
    pub time_reversal: AntiunitaryExtraction,
}

/// Indices of one state with raw values and extraction diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub omega: IndexValue,
    pub beta: IndexValue,
    pub gamma_gx: IndexValue,
    pub gamma_gz: IndexValue,
    pub alpha_gx: C64,
    pub alpha_gz: C64,
    pub alpha_t: C64,
    pub dominance_gx: f64,
    pub dominance_gz: f64,
    pub dominance_t: f64,
}

impl IndexReport {
    pub fn signs(&self) -> IndexSigns {
        IndexSigns::new(
            self.omega.sign,
            self.beta.sign,
            self.gamma_gx.sign,
            self.gamma_gz.sign,
        )
    }

    pub fn is_determinate(&self) -> bool {
        [self.omega, self.beta, self.gamma_gx, self.gamma_gz]
            .iter()
            .all(IndexValue::is_determinate)
    }

    /// Largest distance of a raw index from its rounded value.
    pub fn max_distance(&self) -> f64 {
        [self.omega, self.beta, self.gamma_gx, self.gamma_gz]
            .iter()
            .map(|v| v.distance.max(v.scalar_deviation))
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Blocks the unit cell into one right-canonical super-site `(d^k, D, D)`.
pub fn block_to_ti(s: &UnitCellMps) -> Result<Tensor> {
    let a = contract_sites(s.sites())?;
    let gap = transfer_gap(&a)?;
    if gap > 1.0 - 1e-6 {
        return Err(Error::NonInjective { gap_ratio: gap });
    }
    Ok(a)
}

fn rotate_physical(a: &Tensor, u: &Tensor) -> Result<Tensor> {
    contract(u, a, &[(1, 0)])
}

/// Dominant eigenpair of `X -> Σ_i Ã^i X A^i†`.
fn mixed_dominant(rotated: &Tensor, a: &Tensor) -> Result<(C64, Tensor, f64)> {
    let d = a.shape()[1];
    let ac = a.conj();
    let op = |v: &[C64]| -> Vec<C64> {
        let x = Tensor::new(vec![d, d], v.to_vec()).unwrap();
        let ax = contract(rotated, &x, &[(2, 0)]).unwrap();
        contract(&ax, &ac, &[(0, 0), (2, 2)]).unwrap().into_data()
    };
    let ep = dominant_eigenpair(op, d * d, EIG_TOL, EIG_MAX_CYCLES)?;
    Ok((ep.value, Tensor::new(vec![d, d], ep.vector)?, ep.gap_ratio))
}

fn check_symmetric(alpha: C64, dominance: f64, label: &str) -> Result<()> {
    if alpha.norm() < 1.0 - SYMMETRY_TOL {
        return Err(Error::NotSymmetric {
            label: label.to_string(),
            modulus: alpha.norm(),
        });
    }
    if dominance > 1.0 - SYMMETRY_TOL {
        return Err(Error::NonInjective {
            gap_ratio: dominance,
        });
    }
    Ok(())
}

/// Extracts `α(g)` and `R(g)` from a right-canonical super-site tensor.
pub fn extract_unitary(a: &Tensor, action: &SymmetryAction) -> Result<UnitaryExtraction> {
    if action.antiunitary {
        return Err(Error::Config(format!(
            "{} is antiunitary, use extract_antiunitary",
            action.element
        )));
    }
    let rotated = rotate_physical(a, &action.u)?;
    let (alpha, x, dominance) = mixed_dominant(&rotated, a)?;
    check_symmetric(alpha, dominance, action.element.label())?;
    let d = x.nrows();
    let r = inverse(&x)?;
    let rr = r.matmul(&r.dagger())?;
    let r = r.scale_real((d as f64 / rr.trace().re).sqrt());
    let unitarity_error = r.matmul(&r.dagger())?.dist_max(&Tensor::identity(d));
    let c = r.matmul(&r)?.trace() / d as f64;
    let r = r.scale(ONE / c.sqrt());
    Ok(UnitaryExtraction {
        alpha,
        r,
        dominance,
        unitarity_error,
    })
}

/// Extracts `M` for an antiunitary action `u K`.
pub fn extract_antiunitary(a: &Tensor, tr: &SymmetryAction) -> Result<AntiunitaryExtraction> {
    if !tr.antiunitary {
        return Err(Error::Config(format!(
            "{} is unitary, use extract_unitary",
            tr.element
        )));
    }
    let rotated = rotate_physical(&a.conj(), &tr.u)?;
    let (alpha, x, dominance) = mixed_dominant(&rotated, a)?;
    check_symmetric(alpha, dominance, tr.element.label())?;
    let m = inverse(&x)?;
    let mm = m.matmul(&m.conj())?;
    let c = IndexValue::from_matrix(&mm);
    if c.scalar_deviation > SCALAR_TOL * c.raw.norm() {
        return Err(Error::NotSymmetric {
            label: tr.element.label().to_string(),
            modulus: c.scalar_deviation / c.raw.norm(),
        });
    }
    let m = m.scale_real(1.0 / c.raw.norm().sqrt());
    let phase = m.matmul(&m.conj())?.trace() / m.nrows() as f64;
    if phase.im.abs() > SYMMETRY_TOL {
        return Err(Error::NotSymmetric {
            label: tr.element.label().to_string(),
            modulus: phase.norm(),
        });
    }
    Ok(AntiunitaryExtraction {
        alpha,
        m,
        dominance,
    })
}

/// `R(gx)⁻¹ R(gz)⁻¹ R(gx) R(gz)`.
pub fn omega(rx: &Tensor, rz: &Tensor) -> Result<IndexValue> {
    let c = inverse(rx)?
        .matmul(&inverse(rz)?)?
        .matmul(rx)?
        .matmul(rz)?;
    Ok(IndexValue::from_matrix(&c))
}

/// `M conj(M)`.
pub fn beta(m: &Tensor) -> Result<IndexValue> {
    Ok(IndexValue::from_matrix(&m.matmul(&m.conj())?))
}

/// `conj(R)⁻¹ M⁻¹ R M`.
pub fn gamma(r: &Tensor, m: &Tensor) -> Result<IndexValue> {
    let c = inverse(&r.conj())?
        .matmul(&inverse(m)?)?
        .matmul(r)?
        .matmul(m)?;
    Ok(IndexValue::from_matrix(&c))
}

pub fn extract(s: &UnitCellMps) -> Result<ExtractionResult> {
    let mut last = None;
    for floor in EXTRACTION_FLOORS {
        match extract_at(s, floor) {
            Err(e @ Error::NotSymmetric { .. }) => {
                log::debug!("extraction at floor {floor:e}: {e}");
                last = Some(e);
            }
            r => return r,
        }
    }
    Err(last.expect("at least one floor"))
}

fn extract_at(s: &UnitCellMps, floor: f64) -> Result<ExtractionResult> {
    let a = block_to_ti(&s.truncated(floor)?)?;
    let k = s.k();
    Ok(ExtractionResult {
        gx: extract_unitary(&a, &group_action(GroupElement::Gx).power(k))?,
        gz: extract_unitary(&a, &group_action(GroupElement::Gz).power(k))?,
        time_reversal: extract_antiunitary(
            &a,
            &group_action(GroupElement::TimeReversal).power(k),
        )?,
    })
}

/// Full index report of a canonical unit-cell state.
pub fn extract_indices(s: &UnitCellMps) -> Result<IndexReport> {
    let ex = extract(s)?;
    let m = &ex.time_reversal.m;
    Ok(IndexReport {
        omega: omega(&ex.gx.r, &ex.gz.r)?,
        beta: beta(m)?,
        gamma_gx: gamma(&ex.gx.r, m)?,
        gamma_gz: gamma(&ex.gz.r, m)?,
        alpha_gx: ex.gx.alpha,
        alpha_gz: ex.gz.alpha,
        alpha_t: ex.time_reversal.alpha,
        dominance_gx: ex.gx.dominance,
        dominance_gz: ex.gz.dominance,
        dominance_t: ex.time_reversal.dominance,
    })
}

/// Largest relative split `(p₀ - p₁)/p₀` of the leading entanglement
/// doublet over the bonds of the cell; 1 when a bond has a single value.
pub fn es_doublet_split(s: &UnitCellMps) -> f64 {
    (0..s.k())
        .map(|b| {
            let es = s.entanglement_spectrum(b);
            if es.len() < 2 {
                1.0
            } else {
                (es[0] - es[1]) / es[0]
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseLabel {
    Trivial,
    Haldane,
    Cspt,
    OtherComposite { left: IndexSigns, right: IndexSigns },
    Unclassified,
    Unconverged,
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhaseLabel::Trivial => f.write_str("Trivial"),
            PhaseLabel::Haldane => f.write_str("Haldane"),
            PhaseLabel::Cspt => f.write_str("CSPT"),
            PhaseLabel::OtherComposite { left, right } => {
                let t = |s: &IndexSigns| {
                    let (o, z, x) = s.phase_triple();
                    format!("{o:+}/{z:+}/{x:+}")
                };
                write!(f, "other-composite(L={};R={})", t(left), t(right))
            }
            PhaseLabel::Unclassified => f.write_str("unclassified"),
            PhaseLabel::Unconverged => f.write_str("unconverged"),
        }
    }
}

/// Names the phase of a (left, right) pair from `(ω, γ(gz), γ(gx))`.
pub fn classify_pair(left: &IndexReport, right: &IndexReport) -> PhaseLabel {
    if !left.is_determinate() || !right.is_determinate() {
        return PhaseLabel::Unclassified;
    }
    let (l, r) = (left.signs(), right.signs());
    match (l.phase_triple(), r.phase_triple()) {
        ((1, 1, 1), (1, 1, 1)) => PhaseLabel::Trivial,
        ((-1, -1, -1), (-1, -1, -1)) => PhaseLabel::Haldane,
        ((-1, 1, -1), (-1, -1, -1)) => PhaseLabel::Cspt,
        _ => PhaseLabel::OtherComposite { left: l, right: r },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmetry::{catalog_state, StateName};
    use crate::tensor::{I, ZERO};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn pauli(which: char) -> Tensor {
        match which {
            'x' => Tensor::real_matrix(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap(),
            'y' => Tensor::matrix(&[vec![ZERO, -I], vec![I, ZERO]]).unwrap(),
            'z' => Tensor::real_matrix(&[&[1.0, 0.0], &[0.0, -1.0]]).unwrap(),
            _ => Tensor::identity(2),
        }
    }

    fn state(name: StateName, k: usize) -> UnitCellMps {
        UnitCellMps::from_tensor(&catalog_state(name).tensor(), k).unwrap()
    }

    #[test]
    fn golden_table() {
        for name in StateName::ALL {
            let report = extract_indices(&state(name, 4)).unwrap();
            assert_eq!(report.signs(), catalog_state(name).expected, "{name}");
            assert!(report.max_distance() < 1e-6, "{name}: {}", report.max_distance());
        }
    }

    #[test]
    fn formula_examples() {
        let (x, y, z, e) = (pauli('x'), pauli('y'), pauli('z'), pauli('e'));
        assert_eq!(omega(&x, &z).unwrap().sign, -1);
        assert_eq!(omega(&e, &e).unwrap().sign, 1);
        assert_eq!(omega(&x, &e).unwrap().sign, 1);
        assert_eq!(beta(&y).unwrap().sign, -1);
        assert_eq!(beta(&z).unwrap().sign, 1);
        assert_eq!(beta(&x).unwrap().sign, 1);
        assert_eq!(gamma(&z, &y).unwrap().sign, -1);
        assert_eq!(gamma(&z, &z).unwrap().sign, 1);
        assert_eq!(gamma(&x, &x).unwrap().sign, 1);
    }

    #[test]
    fn non_scalar_commutator_is_indeterminate() {
        let v = IndexValue::from_matrix(&Tensor::real_matrix(&[&[1.0, 0.0], &[0.0, 0.5]]).unwrap());
        assert!(!v.is_determinate());
    }

    fn proportional(a: &Tensor, b: &Tensor) -> bool {
        let c: C64 = a.conj().data().iter().zip(b.data()).map(|(p, q)| p * q).sum();
        (c.norm() - a.norm() * b.norm()).abs() < 1e-8
    }

    #[test]
    fn recovers_pauli_bond_actions() {
        for name in [StateName::Psi0, StateName::PsiX, StateName::PsiY, StateName::PsiZ] {
            let a = catalog_state(name).tensor().scale_real(1.0 / 3f64.sqrt());
            let gx = extract_unitary(&a, &group_action(GroupElement::Gx)).unwrap();
            let gz = extract_unitary(&a, &group_action(GroupElement::Gz)).unwrap();
            assert!(proportional(&gx.r, &pauli('x')), "{name} gx");
            assert!(proportional(&gz.r, &pauli('z')), "{name} gz");
            assert!((gx.alpha.norm() - 1.0).abs() < 1e-10);
        }
        let want = [
            (StateName::Psi0, 'y'),
            (StateName::PsiX, 'z'),
            (StateName::PsiY, 'e'),
            (StateName::PsiZ, 'x'),
        ];
        let tr = group_action(GroupElement::TimeReversal);
        for (name, p) in want {
            let a = catalog_state(name).tensor().scale_real(1.0 / 3f64.sqrt());
            let m = extract_antiunitary(&a, &tr).unwrap().m;
            assert!(proportional(&m, &pauli(p)), "{name} M");
        }
    }

    #[test]
    fn trivial_state_has_scalar_bond_action() {
        let a = catalog_state(StateName::Trivial).tensor();
        let gz = extract_unitary(&a, &group_action(GroupElement::Gz)).unwrap();
        assert_eq!(gz.r.shape(), &[1, 1]);
        assert!((gz.alpha - ONE).norm() < 1e-12);
    }

    #[test]
    fn block_to_ti_shapes() {
        let b = block_to_ti(&state(StateName::Psi0, 2)).unwrap();
        assert_eq!(b.shape(), &[9, 2, 2]);
        let p = block_to_ti(&state(StateName::Trivial, 4)).unwrap();
        assert_eq!(p.shape(), &[81, 1, 1]);
    }

    #[test]
    fn blocking_invariance() {
        for name in StateName::ALL {
            let a = extract_indices(&state(name, 2)).unwrap().signs();
            let b = extract_indices(&state(name, 4)).unwrap().signs();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn gauge_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for name in [StateName::Psi0, StateName::PsiX, StateName::PsiY, StateName::PsiZ] {
            let a = catalog_state(name).tensor();
            for _ in 0..20 {
                let mut raw = Vec::new();
                let gauges: Vec<Tensor> = (0..4)
                    .map(|_| {
                        Tensor::from_fn(&[2, 2], |ix| {
                            let base = if ix[0] == ix[1] { 1.5 } else { 0.0 };
                            let re: f64 = StandardNormal.sample(&mut rng);
                            let im: f64 = StandardNormal.sample(&mut rng);
                            C64::new(base + 0.4 * re, 0.4 * im)
                        })
                    })
                    .collect();
                for i in 0..4 {
                    let g_left = inverse(&gauges[(i + 3) % 4]).unwrap();
                    let t = contract(&g_left, &a, &[(1, 1)]).unwrap().permute(&[1, 0, 2]).unwrap();
                    raw.push(contract(&t, &gauges[i], &[(2, 0)]).unwrap());
                }
                let s = UnitCellMps::canonicalize(&raw).unwrap();
                let report = extract_indices(&s).unwrap();
                assert_eq!(report.signs(), catalog_state(name).expected, "{name}");
            }
        }
    }

    #[test]
    fn classification_table() {
        let mk = |s: IndexSigns| {
            let v = |x: i8| IndexValue {
                raw: C64::new(x as f64, 0.0),
                scalar_deviation: 0.0,
                distance: 0.0,
                sign: x,
            };
            IndexReport {
                omega: v(s.omega),
                beta: v(s.beta),
                gamma_gx: v(s.gamma_gx),
                gamma_gz: v(s.gamma_gz),
                alpha_gx: ONE,
                alpha_gz: ONE,
                alpha_t: ONE,
                dominance_gx: 0.0,
                dominance_gz: 0.0,
                dominance_t: 0.0,
            }
        };
        let triv = mk(IndexSigns::new(1, 1, 1, 1));
        let psi0 = mk(IndexSigns::new(-1, -1, -1, -1));
        let psix = mk(IndexSigns::new(-1, 1, -1, 1));
        assert_eq!(classify_pair(&triv, &triv), PhaseLabel::Trivial);
        assert_eq!(classify_pair(&psi0, &psi0), PhaseLabel::Haldane);
        assert_eq!(classify_pair(&psix, &psi0), PhaseLabel::Cspt);
        assert_eq!(classify_pair(&psix, &psi0).to_string(), "CSPT");
        assert!(matches!(classify_pair(&psi0, &psix), PhaseLabel::OtherComposite { .. }));
        assert_eq!(classify_pair(&mk(IndexSigns::new(0, 1, 1, 1)), &triv), PhaseLabel::Unclassified);
    }

    #[test]
    fn report_json_round_trip() {
        let r = extract_indices(&state(StateName::PsiX, 4)).unwrap();
        let back: IndexReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn doublet_split() {
        assert!(es_doublet_split(&state(StateName::Psi0, 4)) < 1e-12);
        assert_eq!(es_doublet_split(&state(StateName::Trivial, 4)), 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gamma_is_branch_invariant(re in proptest::collection::vec(-1.0f64..1.0, 8)) {
            // random unitary R with R² = 1: reflection 1 - 2 v v†
            let v = Tensor::vector(vec![C64::new(re[0], re[1]), C64::new(re[2], re[3])]);
            prop_assume!(v.norm() > 1e-3);
            let v = v.scale_real(1.0 / v.norm()).reshape(&[2, 1]).unwrap();
            let r = Tensor::identity(2).sub(&v.matmul(&v.dagger()).unwrap().scale_real(2.0)).unwrap();
            let m = Tensor::from_fn(&[2, 2], |ix| C64::new(re[4 + 2 * ix[0] + ix[1]], 0.1));
            prop_assume!(crate::linalg::inverse(&m).is_ok());
            let a = gamma(&r, &m).unwrap();
            let b = gamma(&r.scale_real(-1.0), &m).unwrap();
            prop_assert!((a.raw - b.raw).norm() < 1e-12);
            prop_assert_eq!(a.sign, b.sign);
        }
    }
}
