//! Spin-1 operators, the D2 x time-reversal action on the physical leg, and a
//! catalog of D = 2 model states.
//!
//! All operators live in the Sz eigenbasis `{|+1>, |0>, |-1>}`. Catalog
//! tensors are written in the Cartesian basis `{|x>, |y>, |z>}` and converted
//! with [`cartesian_to_sz`] before use; never mix the two.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::matrix_exponential;
use crate::spt::IndexSigns;
use crate::tensor::{Tensor, C64, I, ONE, ZERO};

pub const SPIN1_DIM: usize = 3;

#[derive(Clone, Debug)]
pub struct Spin1 {
    pub sx: Tensor,
    pub sy: Tensor,
    pub sz: Tensor,
    pub sz2: Tensor,
}

pub fn spin1_matrices() -> Spin1 {
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    let ih = I * FRAC_1_SQRT_2;
    let sx = Tensor::matrix(&[vec![ZERO, h, ZERO], vec![h, ZERO, h], vec![ZERO, h, ZERO]]).unwrap();
    let sy = Tensor::matrix(&[
        vec![ZERO, -ih, ZERO],
        vec![ih, ZERO, -ih],
        vec![ZERO, ih, ZERO],
    ])
    .unwrap();
    let sz = Tensor::diag(&[ONE, ZERO, -ONE]);
    let sz2 = sz.matmul(&sz).unwrap();
    Spin1 { sx, sy, sz, sz2 }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupElement {
    E,
    Gx,
    Gy,
    Gz,
    TimeReversal,
}

impl GroupElement {
    pub const D2: [GroupElement; 4] = [Self::E, Self::Gx, Self::Gy, Self::Gz];

    pub fn label(self) -> &'static str {
        match self {
            Self::E => "e",
            Self::Gx => "gx",
            Self::Gy => "gy",
            Self::Gz => "gz",
            Self::TimeReversal => "T",
        }
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for GroupElement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "e" | "E" | "id" => Self::E,
            "gx" => Self::Gx,
            "gy" => Self::Gy,
            "gz" => Self::Gz,
            "T" | "t" | "tr" | "𝒯" => Self::TimeReversal,
            other => return Err(Error::unknown("group element", other)),
        })
    }
}

/// Action of a group element on the physical leg. For time reversal the
/// full operator is `u K` with `K` complex conjugation in the Sz basis.
#[derive(Clone, Debug)]
pub struct SymmetryAction {
    pub element: GroupElement,
    pub u: Tensor,
    pub antiunitary: bool,
}

impl SymmetryAction {
    /// The same element acting on a block of `k` sites, `u^{⊗k}`.
    pub fn power(&self, k: usize) -> SymmetryAction {
        let mut u = self.u.clone();
        for _ in 1..k {
            u = u.kron(&self.u);
        }
        SymmetryAction {
            element: self.element,
            u,
            antiunitary: self.antiunitary,
        }
    }
}

fn rotation_by_pi(generator: &Tensor) -> Tensor {
    matrix_exponential(generator, C64::new(0.0, -PI)).expect("3x3 exponential")
}

pub fn group_action(element: GroupElement) -> SymmetryAction {
    let s = spin1_matrices();
    let (u, antiunitary) = match element {
        GroupElement::E => (Tensor::identity(SPIN1_DIM), false),
        GroupElement::Gx => (rotation_by_pi(&s.sx), false),
        GroupElement::Gz => (rotation_by_pi(&s.sz), false),
        // gy is the product gx gz, not an independent exponential
        GroupElement::Gy => (
            rotation_by_pi(&s.sx).matmul(&rotation_by_pi(&s.sz)).unwrap(),
            false,
        ),
        GroupElement::TimeReversal => (rotation_by_pi(&s.sy), true),
    };
    SymmetryAction {
        element,
        u,
        antiunitary,
    }
}

/// Columns are the Cartesian states written in the Sz basis:
/// `|x> = (|-1> - |+1>)/√2`, `|y> = i(|+1> + |-1>)/√2`, `|z> = |0>`.
pub fn cartesian_to_sz() -> Tensor {
    let h = FRAC_1_SQRT_2;
    Tensor::matrix(&[
        vec![C64::new(-h, 0.0), C64::new(0.0, h), ZERO],
        vec![ZERO, ZERO, ONE],
        vec![C64::new(h, 0.0), C64::new(0.0, h), ZERO],
    ])
    .unwrap()
}

/// Re-expresses the physical leg (axis 0) of a site tensor through `basis`,
/// i.e. `A'[m] = Σ_a basis[m, a] A[a]`.
pub fn change_physical_basis(a: &Tensor, basis: &Tensor) -> Tensor {
    crate::tensor::contract(basis, a, &[(1, 0)]).expect("physical basis change")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateName {
    Psi0,
    PsiX,
    PsiY,
    PsiZ,
    /// The product state `|m = 0>` on every site.
    Trivial,
}

impl StateName {
    pub const ALL: [StateName; 5] = [
        Self::Psi0,
        Self::PsiX,
        Self::PsiY,
        Self::PsiZ,
        Self::Trivial,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Psi0 => "psi0",
            Self::PsiX => "psix",
            Self::PsiY => "psiy",
            Self::PsiZ => "psiz",
            Self::Trivial => "trivial",
        }
    }
}

impl fmt::Display for StateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for StateName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "psi0" | "ψ0" | "ψ₀" | "aklt" => Self::Psi0,
            "psix" | "ψx" => Self::PsiX,
            "psiy" | "ψy" => Self::PsiY,
            "psiz" | "ψz" => Self::PsiZ,
            "trivial" | "product" | "zero" => Self::Trivial,
            other => return Err(Error::unknown("catalog state", other)),
        })
    }
}

#[derive(Clone, Debug)]
pub struct CatalogState {
    pub name: StateName,
    /// Site tensor `(d, D, D)` in the Cartesian basis.
    pub cartesian: Tensor,
    /// Index row `(ω, β, γ(gx), γ(gz))`.
    pub expected: IndexSigns,
}

impl CatalogState {
    /// Site tensor in the Sz eigenbasis.
    pub fn tensor(&self) -> Tensor {
        change_physical_basis(&self.cartesian, &cartesian_to_sz())
    }
}

fn paulis() -> [Tensor; 3] {
    [
        Tensor::real_matrix(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap(),
        Tensor::matrix(&[vec![ZERO, -I], vec![I, ZERO]]).unwrap(),
        Tensor::real_matrix(&[&[1.0, 0.0], &[0.0, -1.0]]).unwrap(),
    ]
}

fn stack(mats: &[Tensor]) -> Tensor {
    let d = mats[0].nrows();
    let data: Vec<C64> = mats.iter().flat_map(|m| m.data().to_vec()).collect();
    Tensor::new(vec![mats.len(), d, d], data).unwrap()
}

pub fn catalog_state(name: StateName) -> CatalogState {
    let [x, y, z] = paulis();
    let (cartesian, expected) = match name {
        StateName::Psi0 => (stack(&[x, y, z]), IndexSigns::new(-1, -1, -1, -1)),
        StateName::PsiX => (stack(&[x.scale(I), y, z]), IndexSigns::new(-1, 1, -1, 1)),
        StateName::PsiY => (stack(&[x, y.scale(I), z]), IndexSigns::new(-1, 1, 1, 1)),
        StateName::PsiZ => (stack(&[x, y, z.scale(I)]), IndexSigns::new(-1, 1, 1, -1)),
        StateName::Trivial => (
            Tensor::new(vec![3, 1, 1], vec![ZERO, ZERO, ONE]).unwrap(),
            IndexSigns::new(1, 1, 1, 1),
        ),
    };
    CatalogState {
        name,
        cartesian,
        expected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn commutator(a: &Tensor, b: &Tensor) -> Tensor {
        a.matmul(b).unwrap().sub(&b.matmul(a).unwrap()).unwrap()
    }

    #[test]
    fn spin_algebra() {
        let s = spin1_matrices();
        assert_eq!(s.sz, Tensor::diag(&[ONE, ZERO, -ONE]));
        assert_eq!(s.sz2, Tensor::diag(&[ONE, ZERO, ONE]));
        let cas = s.sx.matmul(&s.sx).unwrap()
            .add(&s.sy.matmul(&s.sy).unwrap()).unwrap()
            .add(&s.sz2).unwrap();
        assert!(cas.dist_max(&Tensor::identity(3).scale_real(2.0)) < 1e-12);
        assert!(commutator(&s.sx, &s.sy).dist_max(&s.sz.scale(I)) < 1e-12);
        assert!(commutator(&s.sy, &s.sz).dist_max(&s.sx.scale(I)) < 1e-12);
        assert!(commutator(&s.sz, &s.sx).dist_max(&s.sy.scale(I)) < 1e-12);
    }

    #[test]
    fn group_elements() {
        let gz = group_action(GroupElement::Gz);
        assert!(gz.u.dist_max(&Tensor::diag(&[-ONE, ONE, -ONE])) < 1e-12);
        assert_eq!(group_action(GroupElement::E).u, Tensor::identity(3));
        for g in GroupElement::D2 {
            let u = group_action(g).u;
            assert!(u.matmul(&u).unwrap().dist_max(&Tensor::identity(3)) < 1e-12, "{g}");
            assert!(u.matmul(&u.dagger()).unwrap().dist_max(&Tensor::identity(3)) < 1e-12);
        }
        let t = group_action(GroupElement::TimeReversal);
        assert!(t.antiunitary);
        assert!(t.u.matmul(&t.u.dagger()).unwrap().dist_max(&Tensor::identity(3)) < 1e-12);
        // T^2 = u conj(u) = +1 for integer spin
        assert!(t.u.matmul(&t.u.conj()).unwrap().dist_max(&Tensor::identity(3)) < 1e-12);
    }

    #[test]
    fn gy_is_gx_gz_and_commutes() {
        let gx = group_action(GroupElement::Gx).u;
        let gz = group_action(GroupElement::Gz).u;
        let gy = group_action(GroupElement::Gy).u;
        assert!(gz.matmul(&gx).unwrap().dist_max(&gy) < 1e-12);
        // also a π rotation about y up to the trivial phase
        let direct = rotation_by_pi(&spin1_matrices().sy);
        assert!(direct.dist_max(&gy) < 1e-12 || direct.dist_max(&gy.scale_real(-1.0)) < 1e-12);
    }

    #[test]
    fn cartesian_basis_is_unitary_and_rotations_are_diagonal() {
        let b = cartesian_to_sz();
        assert!(b.dagger().matmul(&b).unwrap().dist_max(&Tensor::identity(3)) < 1e-12);
        let in_cart = |u: &Tensor| b.dagger().matmul(u).unwrap().matmul(&b).unwrap();
        let gx = in_cart(&group_action(GroupElement::Gx).u);
        assert!(gx.dist_max(&Tensor::diag(&[ONE, -ONE, -ONE])) < 1e-12);
        let gz = in_cart(&group_action(GroupElement::Gz).u);
        assert!(gz.dist_max(&Tensor::diag(&[-ONE, -ONE, ONE])) < 1e-12);
        // time reversal acts as -K on Cartesian coefficients
        let t = group_action(GroupElement::TimeReversal).u;
        let tc = b.dagger().matmul(&t).unwrap().matmul(&b.conj()).unwrap();
        assert!(tc.dist_max(&Tensor::identity(3).scale_real(-1.0)) < 1e-12);
    }

    #[test]
    fn catalog_rows() {
        assert_eq!(catalog_state(StateName::Psi0).expected, IndexSigns::new(-1, -1, -1, -1));
        assert_eq!(catalog_state(StateName::PsiX).expected, IndexSigns::new(-1, 1, -1, 1));
        assert_eq!(catalog_state(StateName::PsiZ).expected, IndexSigns::new(-1, 1, 1, -1));
        assert_eq!("aklt".parse::<StateName>().unwrap(), StateName::Psi0);
        assert!("psiw".parse::<StateName>().is_err());
        assert!("gw".parse::<GroupElement>().is_err());
        let psix = catalog_state(StateName::PsiX).cartesian;
        assert_eq!(psix.get(&[0, 0, 1]), I);
    }

    #[test]
    fn cartesian_tensors_obey_symmetry_relation() {
        // Σ_j u_ij A^j = α R^{-1} A^i R with R(gx) = X, R(gz) = Z, checked in
        // the Cartesian basis where u(gx), u(gz) are diagonal sign flips.
        let [x, _, z] = paulis();
        for name in [StateName::Psi0, StateName::PsiX, StateName::PsiY, StateName::PsiZ] {
            let a = catalog_state(name).cartesian;
            for (signs, r) in [([1.0, -1.0, -1.0], &x), ([-1.0, -1.0, 1.0], &z)] {
                let mut alpha = None;
                for i in 0..3 {
                    let ai = Tensor::from_fn(&[2, 2], |ix| a.get(&[i, ix[0], ix[1]]));
                    let lhs = ai.scale_real(signs[i]);
                    let rhs = r.matmul(&ai).unwrap().matmul(r).unwrap();
                    let al = *alpha.get_or_insert(if lhs.dist_max(&rhs) < 1e-12 { ONE } else { -ONE });
                    assert!(lhs.dist_max(&rhs.scale(al)) < 1e-12, "{name}");
                }
            }
        }
    }
}
