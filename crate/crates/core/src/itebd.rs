//! Multisite imaginary-time evolution of infinite MPS.
//!
//! The right state evolves under `exp(-dτ h)` and the left state under
//! `exp(-dτ h†)`, as two independent flows with plain SVD truncation. They
//! only meet when the biorthogonal energy is measured at the end.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::matrix_exponential;
use crate::mps::{contract_sites, measure_with, mixed_transfer_fixed_points, UnitCellMps, SCHMIDT_FLOOR};
use crate::parent::{HamiltonianSpec, LocalTerm};
use crate::strategy::{init_registry, trotter_registry, truncation_registry, Stage, TrotterScheme, TruncationScheme};
use crate::symmetry::SPIN1_DIM;
use crate::tensor::{Tensor, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    /// Maximum bond dimension `D`.
    pub bond_dim: usize,
    pub dtau: f64,
    /// Convergence threshold on the per-step Schmidt change `e`.
    pub epsilon: f64,
    pub max_steps: usize,
    /// Registered Trotter scheme name ("first-order", "second-order").
    pub trotter: String,
    pub seed: u64,
    /// "random" or a catalog state name.
    pub init: String,
    /// Registered truncation scheme name.
    pub truncation: String,
    /// Relative Schmidt weight below which values are dropped.
    pub weight_floor: f64,
    /// Smaller time steps run in turn after converging at `dtau`.
    pub dtau_schedule: Vec<f64>,
    /// Restore the exact canonical form every this many steps (0 = never).
    pub canonicalize_every: usize,
    /// Write a checkpoint of both states every this many steps (0 = never).
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub resume_from: Option<PathBuf>,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            bond_dim: 32,
            dtau: 1e-2,
            epsilon: 1e-12,
            max_steps: 50_000,
            trotter: "first-order".into(),
            seed: 2024,
            init: "random".into(),
            truncation: "svd".into(),
            weight_floor: SCHMIDT_FLOOR,
            dtau_schedule: Vec::new(),
            canonicalize_every: 1,
            checkpoint_every: 0,
            checkpoint_path: None,
            resume_from: None,
        }
    }
}

impl EvolutionConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: EvolutionConfig =
            toml::from_str(text).map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bond_dim < 2 {
            return Err(Error::Config(format!("bond_dim must be >= 2, got {}", self.bond_dim)));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.dtau) || self.dtau_schedule.iter().any(|&x| !positive(x)) {
            return Err(Error::Config("time steps must be positive".into()));
        }
        if !positive(self.epsilon) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.checkpoint_every > 0 && self.checkpoint_path.is_none() {
            return Err(Error::Config("checkpoint_every needs checkpoint_path".into()));
        }
        trotter_registry().get(&self.trotter)?;
        init_registry().get(&self.init)?;
        truncation_registry(self.weight_floor).get(&self.truncation)?;
        Ok(())
    }
}

/// `exp(-dτ h)` (or of `h†`) for the block term and the single-site term.
#[derive(Clone, Debug)]
pub struct GateSet {
    pub span: usize,
    pub block: Tensor,
    pub onsite: Tensor,
}

pub fn build_gates(spec: &HamiltonianSpec, dtau: f64, adjoint: bool) -> Result<GateSet> {
    let pick = |t: LocalTerm| if adjoint { t.dagger() } else { t };
    let h = pick(spec.local_term());
    let o = pick(spec.onsite_term());
    Ok(GateSet {
        span: h.span,
        block: matrix_exponential(&h.matrix, C64::new(-dtau, 0.0))?,
        onsite: matrix_exponential(&o.matrix, C64::new(-dtau, 0.0))?,
    })
}

/// One full Trotter step: block gates with their alignments, applied in order.
#[derive(Clone, Debug)]
pub struct GateSequence {
    pub span: usize,
    pub gates: Vec<(usize, Tensor)>,
}

impl GateSequence {
    /// Composes the stages of `scheme`. Single-site factors are folded into
    /// the adjacent block gate, which covers every site of the cell.
    pub fn build(
        spec: &HamiltonianSpec,
        dtau: f64,
        adjoint: bool,
        scheme: &dyn TrotterScheme,
    ) -> Result<Self> {
        let k = spec.k;
        let stages = scheme.stages(k);
        let mut cache: Vec<(f64, GateSet)> = Vec::new();
        let mut gate_for = |fraction: f64| -> Result<GateSet> {
            if let Some((_, g)) = cache.iter().find(|(f, _)| *f == fraction) {
                return Ok(g.clone());
            }
            let g = build_gates(spec, fraction * dtau, adjoint)?;
            cache.push((fraction, g.clone()));
            Ok(g)
        };
        let mut gates: Vec<(usize, Tensor)> = Vec::new();
        for (i, stage) in stages.iter().enumerate() {
            let (alignment, op) = match *stage {
                Stage::Block { alignment, fraction } => (alignment, gate_for(fraction)?.block),
                Stage::Onsite { fraction } => {
                    let g = gate_for(fraction)?.onsite;
                    let mut full = g.clone();
                    for _ in 1..k {
                        full = full.kron(&g);
                    }
                    let neighbour = stages[i + 1..]
                        .iter()
                        .chain(stages[..i].iter().rev())
                        .find_map(|s| match s {
                            Stage::Block { alignment, .. } => Some(*alignment),
                            Stage::Onsite { .. } => None,
                        })
                        .unwrap_or(0);
                    (neighbour, full)
                }
            };
            match gates.last_mut() {
                Some((a, prev)) if *a == alignment => *prev = op.matmul(prev)?,
                _ => gates.push((alignment, op)),
            }
        }
        Ok(GateSequence { span: k, gates })
    }

    pub fn adjoint_of(&self) -> GateSequence {
        GateSequence {
            span: self.span,
            gates: self.gates.iter().map(|(a, g)| (*a, g.dagger())).collect(),
        }
    }
}

/// `Σ_i Σ_j (s_ij(new) - s_ij(old))²` over all bonds, zero-padded.
pub fn schmidt_change(old: &UnitCellMps, new: &UnitCellMps) -> f64 {
    old.lambdas()
        .iter()
        .zip(new.lambdas())
        .map(|(a, b)| {
            let n = a.len().max(b.len());
            (0..n)
                .map(|j| {
                    let x = a.get(j).copied().unwrap_or(0.0);
                    let y = b.get(j).copied().unwrap_or(0.0);
                    (x - y).powi(2)
                })
                .sum::<f64>()
        })
        .sum()
}

/// Applies one gate covering `span` sites starting at `alignment`.
fn apply_gate(
    state: &UnitCellMps,
    alignment: usize,
    gate: &Tensor,
    span: usize,
    bond_dim: usize,
    trunc: &dyn TruncationScheme,
) -> Result<UnitCellMps> {
    let k = state.k();
    let d = state.d();
    let idx: Vec<usize> = (0..span).map(|j| (alignment + j) % k).collect();
    let block = contract_sites(&idx.iter().map(|&i| state.site(i).clone()).collect::<Vec<_>>())?;
    let (p, dl, dr) = (block.shape()[0], block.shape()[1], block.shape()[2]);
    let psi = gate
        .matmul(&block.reshape(&[p, dl * dr])?)?
        .reshape(&[p, dl, dr])?
        .permute(&[1, 0, 2])?;
    let left_lambda = state.lambda(alignment + k - 1);
    let (sites, inner, _) = trunc.split(psi, left_lambda, d, span, bond_dim)?;
    let mut all_sites = state.sites().to_vec();
    let mut all_lambdas = state.lambdas().to_vec();
    for (j, s) in sites.into_iter().enumerate() {
        all_sites[idx[j]] = s;
    }
    for (j, l) in inner.into_iter().enumerate() {
        all_lambdas[idx[j]] = l;
    }
    UnitCellMps::from_parts(all_sites, all_lambdas)
}

/// Applies a full Trotter step and reports the Schmidt change `e`.
pub fn sweep_once(
    state: &UnitCellMps,
    seq: &GateSequence,
    bond_dim: usize,
    trunc: &dyn TruncationScheme,
) -> Result<(UnitCellMps, f64)> {
    if seq.span > state.k() {
        return Err(Error::Dimension(format!(
            "gates span {} sites, unit cell has {}",
            seq.span,
            state.k()
        )));
    }
    let mut cur = state.clone();
    for (alignment, gate) in &seq.gates {
        cur = apply_gate(&cur, *alignment, gate, seq.span, bond_dim, trunc)?;
    }
    if !cur.sites().iter().all(Tensor::is_finite) {
        return Err(Error::NonFinite("evolved state"));
    }
    let e = schmidt_change(state, &cur);
    Ok((cur, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Converged,
    Plateau,
    Oscillation,
    /// Still decreasing when the budget ran out.
    Unconverged,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualVerdict {
    pub verdict: Verdict,
    pub final_e: f64,
}

const VERDICT_WINDOW: usize = 50;

/// Classifies a history of per-step Schmidt changes.
pub fn residual(history: &[f64], epsilon: f64) -> ResidualVerdict {
    let final_e = history.last().copied().unwrap_or(f64::INFINITY);
    let verdict = if final_e <= epsilon {
        Verdict::Converged
    } else {
        let w = &history[history.len().saturating_sub(VERDICT_WINDOW)..];
        let diffs: Vec<f64> = w.windows(2).map(|p| p[1] - p[0]).collect();
        let flips = diffs.windows(2).filter(|p| p[0] * p[1] < 0.0).count();
        let (lo, hi) = w
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
        if diffs.len() >= 4 && flips * 5 >= (diffs.len() - 1) * 4 && hi > 2.0 * lo {
            Verdict::Oscillation
        } else if w.len() >= 4 && hi <= 2.0 * lo {
            Verdict::Plateau
        } else {
            Verdict::Unconverged
        }
    };
    ResidualVerdict { verdict, final_e }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub step: usize,
    pub e_left: f64,
    pub e_right: f64,
}

pub fn write_residual_csv<W: Write>(history: &[ResidualSample], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in history {
        out.serialize(s)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct EvolutionResult {
    pub left: UnitCellMps,
    pub right: UnitCellMps,
    pub energy_per_site: C64,
    pub residual_history: Vec<ResidualSample>,
    pub steps_used: usize,
    pub converged: bool,
    pub verdict_left: ResidualVerdict,
    pub verdict_right: ResidualVerdict,
    /// Dominant eigenvalue of the mixed transfer map per unit cell.
    pub overlap_rate: C64,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"CSPTCKP\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Snapshot of both flows.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub left: UnitCellMps,
    pub right: UnitCellMps,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.step as u64).to_le_bytes())?;
        self.left.write_to(w)?;
        self.right.write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        if u32::from_le_bytes(v) != CHECKPOINT_VERSION {
            return Err(Error::Format("unsupported checkpoint version".into()));
        }
        let mut s = [0u8; 8];
        r.read_exact(&mut s)?;
        Ok(Checkpoint {
            step: u64::from_le_bytes(s) as usize,
            left: UnitCellMps::read_from(r)?,
            right: UnitCellMps::read_from(r)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::read_from(&mut BufReader::new(File::open(path)?))
    }
}

struct Flow {
    state: UnitCellMps,
    /// Gate sequences for `dtau` followed by the schedule.
    stages: Vec<GateSequence>,
    stage: usize,
    history: Vec<f64>,
    done: bool,
}

impl Flow {
    fn step(&mut self, cfg: &EvolutionConfig, trunc: &dyn TruncationScheme) -> Result<()> {
        if self.done {
            return Ok(());
        }
        let (mut next, mut e) = sweep_once(&self.state, &self.stages[self.stage], cfg.bond_dim, trunc)?;
        if cfg.canonicalize_every > 0 && (self.history.len() + 1) % cfg.canonicalize_every == 0 {
            next = next.recanonicalize()?;
            e = schmidt_change(&self.state, &next);
        }
        self.state = next;
        self.history.push(e);
        if e <= cfg.epsilon {
            if self.stage + 1 < self.stages.len() {
                self.stage += 1;
            } else {
                self.done = true;
            }
        }
        Ok(())
    }

    fn last(&self) -> f64 {
        self.history.last().copied().unwrap_or(f64::INFINITY)
    }
}

fn flow_sequences(
    spec: &HamiltonianSpec,
    cfg: &EvolutionConfig,
    adjoint: bool,
    scheme: &dyn TrotterScheme,
) -> Result<Vec<GateSequence>> {
    std::iter::once(cfg.dtau)
        .chain(cfg.dtau_schedule.iter().copied())
        .map(|dt| GateSequence::build(spec, dt, adjoint, scheme))
        .collect()
}

/// Biorthogonal energy per site `<L|h + U(Sz)²|R>` averaged over placements.
pub fn energy_per_site(spec: &HamiltonianSpec, left: &UnitCellMps, right: &UnitCellMps) -> Result<(C64, C64)> {
    let fp = mixed_transfer_fixed_points(left, right)?;
    let e = measure_with(left, right, &fp, &spec.local_term())?
        + measure_with(left, right, &fp, &spec.onsite_term())?;
    Ok((e, fp.overlap_rate))
}

/// Runs both flows until each has `e <= epsilon` or the step budget is spent.
pub fn find_ground_states(spec: &HamiltonianSpec, cfg: &EvolutionConfig) -> Result<EvolutionResult> {
    cfg.validate()?;
    let scheme = trotter_registry().get(&cfg.trotter)?;
    let trunc = truncation_registry(cfg.weight_floor).get(&cfg.truncation)?;
    let (init_left, init_right, start_step) = match &cfg.resume_from {
        Some(path) => {
            let c = Checkpoint::load(path)?;
            (c.left, c.right, c.step)
        }
        None => {
            let s = init_registry()
                .get(&cfg.init)?
                .initial_state(spec.k, cfg.bond_dim, cfg.seed)?;
            (s.clone(), s, 0)
        }
    };
    if init_right.d() != SPIN1_DIM || init_right.k() != spec.k {
        return Err(Error::Dimension(format!(
            "initial state has d = {}, k = {}; the model needs d = {SPIN1_DIM}, k = {}",
            init_right.d(),
            init_right.k(),
            spec.k
        )));
    }

    let right_seq = flow_sequences(spec, cfg, false, scheme.as_ref())?;
    let left_seq: Vec<GateSequence> = right_seq.iter().map(GateSequence::adjoint_of).collect();
    // for a Hermitian model both flows are the same computation
    let hermitian = spec.local_term().matrix.is_hermitian(1e-12) && init_left == init_right;

    let mut right = Flow {
        state: init_right,
        stages: right_seq,
        stage: 0,
        history: Vec::new(),
        done: false,
    };
    let mut left = Flow {
        state: init_left,
        stages: left_seq,
        stage: 0,
        history: Vec::new(),
        done: false,
    };
    let mut samples = Vec::new();
    let mut step = start_step;
    while step < cfg.max_steps && !(left.done && right.done) {
        if hermitian {
            right.step(cfg, trunc.as_ref())?;
            left.state = right.state.clone();
            left.history.push(right.last());
            left.done = right.done;
        } else {
            let (l, r) = rayon::join(
                || left.step(cfg, trunc.as_ref()),
                || right.step(cfg, trunc.as_ref()),
            );
            l?;
            r?;
        }
        step += 1;
        samples.push(ResidualSample {
            step,
            e_left: left.last(),
            e_right: right.last(),
        });
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            if let Some(path) = &cfg.checkpoint_path {
                Checkpoint {
                    step,
                    left: left.state.clone(),
                    right: right.state.clone(),
                }
                .save(path)?;
            }
        }
    }

    let verdict_left = residual(&left.history, cfg.epsilon);
    let verdict_right = residual(&right.history, cfg.epsilon);
    let converged = left.done && right.done;
    let l = left.state.recanonicalize()?;
    let r = right.state.recanonicalize()?;
    let (energy, overlap_rate) = energy_per_site(spec, &l, &r)?;
    log::debug!(
        "lambda = {}, U = {}: {} steps, converged = {converged}, E = {energy}",
        spec.lambda,
        spec.u_strength,
        step
    );
    Ok(EvolutionResult {
        left: l,
        right: r,
        energy_per_site: energy,
        residual_history: samples,
        steps_used: step,
        converged,
        verdict_left,
        verdict_right,
        overlap_rate,
    })
}
