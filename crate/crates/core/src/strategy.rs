//! Named, runtime-selectable strategies for the evolution: Trotter schemes,
//! initial states and truncation rules.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mps::{split_block, UnitCellMps};
use crate::symmetry::{catalog_state, StateName};
use crate::tensor::Tensor;

/// A lookup table of trait objects keyed by name.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, entry: Arc<T>) {
        self.entries.insert(name.into(), entry);
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries
            .get(name.trim())
            .cloned()
            .ok_or_else(|| Error::unknown(self.kind, name))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

/// One factor of a Trotter product.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stage {
    /// Single-site term on every site, for `fraction · dτ`.
    Onsite { fraction: f64 },
    /// Block term starting at `alignment`, for `fraction · dτ`.
    Block { alignment: usize, fraction: f64 },
}

pub trait TrotterScheme: Send + Sync {
    fn name(&self) -> &'static str;
    /// Factors in application order for a cell of `k` alignments.
    fn stages(&self, k: usize) -> Vec<Stage>;
}

/// Onsite term, then the block term at alignments `0, 1, …, k-1`.
pub struct FirstOrder;

impl TrotterScheme for FirstOrder {
    fn name(&self) -> &'static str {
        "first-order"
    }

    fn stages(&self, k: usize) -> Vec<Stage> {
        let mut s = vec![Stage::Onsite { fraction: 1.0 }];
        s.extend((0..k).map(|a| Stage::Block {
            alignment: a,
            fraction: 1.0,
        }));
        s
    }
}

/// Symmetric product: half steps out to the last alignment and back.
pub struct SecondOrder;

impl TrotterScheme for SecondOrder {
    fn name(&self) -> &'static str {
        "second-order"
    }

    fn stages(&self, k: usize) -> Vec<Stage> {
        let mut s = vec![Stage::Onsite { fraction: 0.5 }];
        for a in 0..k {
            s.push(Stage::Block {
                alignment: a,
                fraction: if a + 1 == k { 1.0 } else { 0.5 },
            });
        }
        for a in (0..k.saturating_sub(1)).rev() {
            s.push(Stage::Block {
                alignment: a,
                fraction: 0.5,
            });
        }
        s.push(Stage::Onsite { fraction: 0.5 });
        s
    }
}

pub fn trotter_registry() -> Registry<dyn TrotterScheme> {
    let mut r: Registry<dyn TrotterScheme> = Registry::new("trotter scheme");
    r.register("first-order", Arc::new(FirstOrder));
    r.register("1", Arc::new(FirstOrder));
    r.register("second-order", Arc::new(SecondOrder));
    r.register("2", Arc::new(SecondOrder));
    r
}

pub trait InitStrategy: Send + Sync {
    fn name(&self) -> String;
    fn initial_state(&self, k: usize, bond_dim: usize, seed: u64) -> Result<UnitCellMps>;
}

/// Complex Gaussian cell at full bond dimension, seeded deterministically.
pub struct RandomInit;

impl InitStrategy for RandomInit {
    fn name(&self) -> String {
        "random".into()
    }

    fn initial_state(&self, k: usize, bond_dim: usize, seed: u64) -> Result<UnitCellMps> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        UnitCellMps::random(crate::symmetry::SPIN1_DIM, k, bond_dim, &mut rng)
    }
}

/// A catalog state, at its own bond dimension.
pub struct CatalogInit(pub StateName);

impl InitStrategy for CatalogInit {
    fn name(&self) -> String {
        self.0.label().into()
    }

    fn initial_state(&self, k: usize, _bond_dim: usize, _seed: u64) -> Result<UnitCellMps> {
        UnitCellMps::from_tensor(&catalog_state(self.0).tensor(), k)
    }
}

pub fn init_registry() -> Registry<dyn InitStrategy> {
    let mut r: Registry<dyn InitStrategy> = Registry::new("initial state");
    r.register("random", Arc::new(RandomInit));
    for name in StateName::ALL {
        r.register(name.label(), Arc::new(CatalogInit(name)));
    }
    r.register("aklt", Arc::new(CatalogInit(StateName::Psi0)));
    r
}

/// Re-factorisation of an updated block into right-canonical sites.
pub trait TruncationScheme: Send + Sync {
    fn name(&self) -> &'static str;
    /// Splits `psi (D_l, d^m, D_r)` as in [`crate::mps`]; returns the sites,
    /// the `m - 1` new interior spectra and the discarded weight.
    fn split(
        &self,
        psi: Tensor,
        left_lambda: &[f64],
        d: usize,
        m: usize,
        bond_dim: usize,
    ) -> Result<(Vec<Tensor>, Vec<Vec<f64>>, f64)>;
}

/// Plain SVD truncation to the bond dimension, dropping relative weights
/// below `weight_floor`.
pub struct SvdTruncation {
    pub weight_floor: f64,
}

impl TruncationScheme for SvdTruncation {
    fn name(&self) -> &'static str {
        "svd"
    }

    fn split(
        &self,
        psi: Tensor,
        left_lambda: &[f64],
        d: usize,
        m: usize,
        bond_dim: usize,
    ) -> Result<(Vec<Tensor>, Vec<Vec<f64>>, f64)> {
        split_block(psi, left_lambda, d, m, bond_dim, self.weight_floor, 0.0)
    }
}

/// Relative spread below which neighbouring Schmidt values count as one
/// multiplet.
pub const MULTIPLET_TOL: f64 = 1e-3;

/// SVD truncation that never cuts through a multiplet at the bond-dimension
/// cap, so symmetry-degenerate Schmidt values are kept or dropped together.
pub struct MultipletTruncation {
    pub weight_floor: f64,
    pub multiplet_tol: f64,
}

impl TruncationScheme for MultipletTruncation {
    fn name(&self) -> &'static str {
        "multiplet"
    }

    fn split(
        &self,
        psi: Tensor,
        left_lambda: &[f64],
        d: usize,
        m: usize,
        bond_dim: usize,
    ) -> Result<(Vec<Tensor>, Vec<Vec<f64>>, f64)> {
        split_block(psi, left_lambda, d, m, bond_dim, self.weight_floor, self.multiplet_tol)
    }
}

pub fn truncation_registry(weight_floor: f64) -> Registry<dyn TruncationScheme> {
    let mut r: Registry<dyn TruncationScheme> = Registry::new("truncation scheme");
    r.register("svd", Arc::new(SvdTruncation { weight_floor }));
    r.register(
        "multiplet",
        Arc::new(MultipletTruncation {
            weight_floor,
            multiplet_tol: MULTIPLET_TOL,
        }),
    );
    r
}
