//! Synthetic designs and the seeded benchmark harness.
//!
//! One repetition runs the full two-step pipeline: a warm-started path over
//! `τ`, selection at every `τ`, an RLS refit on each selected set, choice of
//! `τ*` by validation RMSE, and test metrics of the refit at `τ*`.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, rmse, std_dev, Dataset};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::model::{geometric_grid, rls_fit, RlsModel};
use crate::operators::{AssembleOptions, DerivativeSystem};
use crate::selection::{safe_filter_violations, select, selection_error, DEFAULT_DELTA};
use crate::solver::{fit_path, Solver, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum DesignKind {
    /// `Σ_{a≤4} (xᵃ)²` on `[-2,2]⁴⁰`
    Additive2,
    /// `Σ_{a<b≤4} xᵃxᵇ` on `[-2,2]⁴⁰`
    TwoWay2,
    /// `(x¹x²x³)²` on `[-2,2]⁴⁰`
    ThreeWay6,
    /// `(1/π) r e^{-r}`, `r = (x¹)² + (x²)²`, on `[-2,2]²⁰`
    Radial,
    /// `λ Σ_{a<b≤d*} c_ab xᵃxᵇ` on `[-1,1]ᵈ`, unit noise variance
    PairwiseInteractions { d_star: usize },
    /// `x¹ ~ U[-1,1]`, `x² ~ N(0, 0.05)`, `y = (x¹)² + N(0, 0.1)`
    DegenerateMarginal,
}

pub const DESIGN_NAMES: [&str; 6] = ["additive2", "twoway2", "threeway6", "radial", "pairwise", "degenerate"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDesign {
    pub kind: DesignKind,
    pub d: usize,
    /// 0-based relevant variables.
    pub truth: Vec<usize>,
    /// `var(signal) / var(noise)`; infinite means noiseless.
    pub snr: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignKind::Additive2 => write!(f, "additive2"),
            DesignKind::TwoWay2 => write!(f, "twoway2"),
            DesignKind::ThreeWay6 => write!(f, "threeway6"),
            DesignKind::Radial => write!(f, "radial"),
            DesignKind::PairwiseInteractions { d_star } => write!(f, "pairwise{d_star}"),
            DesignKind::DegenerateMarginal => write!(f, "degenerate"),
        }
    }
}

const RADIAL_MC_SAMPLES: usize = 100_000;
const RADIAL_MC_SEED: u64 = 0x5eed_0f4a_d1a1;

fn radial(r: f64) -> f64 {
    r * (-r).exp() / std::f64::consts::PI
}

/// Variance of the radial signal under `U[-2,2]²`, by a fixed-seed Monte Carlo.
pub fn radial_signal_variance() -> f64 {
    static VAR: OnceLock<f64> = OnceLock::new();
    *VAR.get_or_init(|| {
        let mut rng = ChaCha20Rng::seed_from_u64(RADIAL_MC_SEED);
        let vals: Vec<f64> = (0..RADIAL_MC_SAMPLES)
            .map(|_| {
                let a: f64 = rng.gen_range(-2.0..2.0);
                let b: f64 = rng.gen_range(-2.0..2.0);
                radial(a * a + b * b)
            })
            .collect();
        let v = Array1::from(vals);
        let sd = std_dev(v.view());
        sd * sd
    })
}

impl SyntheticDesign {
    fn table(kind: DesignKind, d: usize, truth: Vec<usize>, seed: u64) -> Self {
        SyntheticDesign {
            kind,
            d,
            truth,
            snr: 15.0,
            n_train: 100,
            n_val: 100,
            n_test: 1000,
            seed,
        }
    }

    pub fn additive2(seed: u64) -> Self {
        Self::table(DesignKind::Additive2, 40, vec![0, 1, 2, 3], seed)
    }

    pub fn two_way2(seed: u64) -> Self {
        Self::table(DesignKind::TwoWay2, 40, vec![0, 1, 2, 3], seed)
    }

    pub fn three_way6(seed: u64) -> Self {
        Self::table(DesignKind::ThreeWay6, 40, vec![0, 1, 2], seed)
    }

    pub fn radial(seed: u64) -> Self {
        Self::table(DesignKind::Radial, 20, vec![0, 1], seed)
    }

    pub fn pairwise(d_star: usize, d: usize, n: usize, seed: u64) -> Self {
        SyntheticDesign {
            kind: DesignKind::PairwiseInteractions { d_star },
            d,
            truth: (0..d_star).collect(),
            snr: 15.0,
            n_train: n,
            n_val: n,
            n_test: 500,
            seed,
        }
    }

    pub fn degenerate(seed: u64) -> Self {
        SyntheticDesign {
            kind: DesignKind::DegenerateMarginal,
            d: 2,
            truth: vec![0],
            // var((x¹)²) / 0.1 with x¹ ~ U[-1,1]
            snr: (4.0 / 45.0) / 0.1,
            n_train: 20,
            n_val: 20,
            n_test: 500,
            seed,
        }
    }

    /// Design by command-line name with its default sizes.
    pub fn by_name(name: &str, seed: u64) -> Result<Self> {
        Ok(match name {
            "additive2" => Self::additive2(seed),
            "twoway2" => Self::two_way2(seed),
            "threeway6" => Self::three_way6(seed),
            "radial" => Self::radial(seed),
            "pairwise" => Self::pairwise(4, 20, 100, seed),
            "degenerate" => Self::degenerate(seed),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown design '{other}'; valid designs: {}",
                    DESIGN_NAMES.join(", ")
                )))
            }
        })
    }

    /// Kernel used for this design unless overridden.
    pub fn default_kernel(&self) -> Kernel {
        match self.kind {
            DesignKind::Additive2 | DesignKind::TwoWay2 => Kernel::Polynomial { degree: 2, offset: 1.0 },
            DesignKind::ThreeWay6 => Kernel::Polynomial { degree: 6, offset: 1.0 },
            DesignKind::Radial => Kernel::Gaussian { gamma: 2.0 },
            DesignKind::PairwiseInteractions { .. } => Kernel::Polynomial { degree: 2, offset: 1.0 },
            DesignKind::DegenerateMarginal => Kernel::Polynomial { degree: 2, offset: 1.0 },
        }
    }

    /// Default smoothness weight.
    pub fn default_nu(&self) -> f64 {
        match self.kind {
            DesignKind::DegenerateMarginal => 10.0,
            _ => 1.0,
        }
    }

    /// Training and validation sizes set to `n`.
    pub fn with_n(mut self, n: usize) -> Self {
        self.n_train = n;
        self.n_val = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.truth.is_empty() {
            return Err(Error::InvalidConfig("design needs d ≥ 1 and a nonempty truth set".into()));
        }
        if let Some(&a) = self.truth.iter().find(|&&a| a >= self.d) {
            return Err(Error::IndexOutOfRange { index: a, dim: self.d });
        }
        if !(self.snr > 0.0) {
            return Err(Error::InvalidConfig("snr must be positive".into()));
        }
        if self.n_train < 2 || self.n_val < 2 || self.n_test < 2 {
            return Err(Error::InvalidConfig("every split needs at least 2 samples".into()));
        }
        match self.kind {
            DesignKind::PairwiseInteractions { d_star } if d_star < 2 || d_star > self.d => {
                Err(Error::InvalidConfig(format!("pairwise design needs 2 ≤ d* ≤ d, got d* = {d_star}")))
            }
            DesignKind::DegenerateMarginal if self.d != 2 => {
                Err(Error::InvalidConfig("degenerate design is two-dimensional".into()))
            }
            DesignKind::Additive2 | DesignKind::TwoWay2 if self.d < 4 => {
                Err(Error::InvalidConfig("design needs d ≥ 4".into()))
            }
            DesignKind::ThreeWay6 if self.d < 3 => Err(Error::InvalidConfig("design needs d ≥ 3".into())),
            DesignKind::Radial if self.d < 2 => Err(Error::InvalidConfig("design needs d ≥ 2".into())),
            _ => Ok(()),
        }
    }

    /// Draw the repetition-level parameters (interaction coefficients, scale, noise level).
    pub fn instantiate<R: Rng>(&self, rng: &mut R) -> Result<DesignInstance> {
        self.validate()?;
        let mut coeffs = Vec::new();
        let (scale, signal_var) = match self.kind {
            DesignKind::Additive2 => (1.0, 256.0 / 45.0),
            DesignKind::TwoWay2 => (1.0, 32.0 / 3.0),
            DesignKind::ThreeWay6 => (1.0, (16.0f64 / 5.0).powi(3) - (4.0f64 / 3.0).powi(6)),
            DesignKind::Radial => (1.0, radial_signal_variance()),
            DesignKind::PairwiseInteractions { d_star } => {
                for a in 0..d_star {
                    for b in a + 1..d_star {
                        coeffs.push((a, b, rng.gen_range(0.5..1.0)));
                    }
                }
                // var(xᵃxᵇ) = 1/9 under U[-1,1]; terms are uncorrelated
                let var: f64 = coeffs.iter().map(|(_, _, c)| c * c / 9.0).sum();
                let scale = (self.snr / var).sqrt();
                (scale, scale * scale * var)
            }
            DesignKind::DegenerateMarginal => (1.0, 4.0 / 45.0),
        };
        let noise_var = match self.kind {
            DesignKind::PairwiseInteractions { .. } => 1.0,
            DesignKind::DegenerateMarginal => 0.1,
            _ => signal_var / self.snr,
        };
        Ok(DesignInstance {
            design: self.clone(),
            coeffs,
            scale,
            noise_sd: noise_var.sqrt(),
        })
    }

    /// Train, validation and test sets for the design seed.
    pub fn generate(&self) -> Result<(Dataset, Dataset, Dataset)> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let inst = self.instantiate(&mut rng)?;
        let train = inst.draw(self.n_train, &mut rng).into_dataset()?;
        let val = inst.draw(self.n_val, &mut rng).into_dataset()?;
        let test = inst.draw(self.n_test, &mut rng).into_dataset()?;
        Ok((train, val, test))
    }
}

/// A design with its repetition-level parameters fixed.
#[derive(Debug, Clone)]
pub struct DesignInstance {
    pub design: SyntheticDesign,
    pub coeffs: Vec<(usize, usize, f64)>,
    pub scale: f64,
    pub noise_sd: f64,
}

/// Inputs with the clean signal and the noise kept apart.
#[derive(Debug, Clone)]
pub struct Draw {
    pub x: Array2<f64>,
    pub signal: Array1<f64>,
    pub noise: Array1<f64>,
}

impl Draw {
    pub fn into_dataset(self) -> Result<Dataset> {
        let y = &self.signal + &self.noise;
        Dataset::new(self.x, y)
    }
}

impl DesignInstance {
    pub fn signal(&self, x: &[f64]) -> f64 {
        let f = match self.design.kind {
            DesignKind::Additive2 => x[..4].iter().map(|v| v * v).sum(),
            DesignKind::TwoWay2 => {
                let mut s = 0.0;
                for a in 0..4 {
                    for b in a + 1..4 {
                        s += x[a] * x[b];
                    }
                }
                s
            }
            DesignKind::ThreeWay6 => (x[0] * x[1] * x[2]).powi(2),
            DesignKind::Radial => radial(x[0] * x[0] + x[1] * x[1]),
            DesignKind::PairwiseInteractions { .. } => {
                self.coeffs.iter().map(|&(a, b, c)| c * x[a] * x[b]).sum()
            }
            DesignKind::DegenerateMarginal => x[0] * x[0],
        };
        self.scale * f
    }

    pub fn draw<R: Rng>(&self, n: usize, rng: &mut R) -> Draw {
        let d = self.design.d;
        let mut x = Array2::zeros((n, d));
        match self.design.kind {
            DesignKind::DegenerateMarginal => {
                let second = Normal::new(0.0, 0.05f64.sqrt()).expect("valid normal");
                for mut row in x.rows_mut() {
                    row[0] = rng.gen_range(-1.0..1.0);
                    row[1] = second.sample(rng);
                }
            }
            DesignKind::PairwiseInteractions { .. } => x.mapv_inplace(|_| rng.gen_range(-1.0..1.0)),
            _ => x.mapv_inplace(|_| rng.gen_range(-2.0..2.0)),
        }
        let signal: Array1<f64> = x
            .rows()
            .into_iter()
            .map(|row| self.signal(row.as_slice().expect("row-major")))
            .collect();
        let noise = if self.noise_sd > 0.0 && self.design.snr.is_finite() {
            let w = Normal::new(0.0, self.noise_sd).expect("valid normal");
            Array1::from_shape_fn(n, |_| w.sample(rng))
        } else {
            Array1::zeros(n)
        };
        Draw { x, signal, noise }
    }
}

/// Mean over rows of the Euclidean distance to the `k`-th nearest other row.
pub fn gaussian_width_heuristic(x: ArrayView2<f64>, k: usize) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidDataset("width heuristic needs at least 2 rows".into()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("neighbour rank k must be at least 1".into()));
    }
    let k = if n <= k {
        log::warn!("width heuristic: k = {k} needs more than {n} rows, using k = {}", n - 1);
        n - 1
    } else {
        k
    };
    let total: f64 = (0..n)
        .map(|i| {
            let mut dists: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let diff = &x.row(i) - &x.row(j);
                    diff.dot(&diff).sqrt()
                })
                .collect();
            dists.sort_by(f64::total_cmp);
            dists[k - 1]
        })
        .sum();
    let width = total / n as f64;
    if width == 0.0 {
        log::warn!("width heuristic is zero: rows coincide with their neighbours");
    }
    Ok(width)
}

/// How the `τ` grid is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TauGrid {
    /// `count` geometric points spanning `[lo_frac, 1] · τ_max`.
    Auto { count: usize, lo_frac: f64 },
    /// Explicit values; sorted descending before use.
    Explicit(Vec<f64>),
}

impl Default for TauGrid {
    fn default() -> Self {
        TauGrid::Auto {
            count: 30,
            lo_frac: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub kernel: Kernel,
    pub nu: f64,
    pub taus: TauGrid,
    pub reps: usize,
    pub baseline_rls: bool,
    /// Solver settings other than `τ` and `ν`.
    pub solver: SolverConfig,
    pub delta: f64,
    pub assemble: AssembleOptions,
}

impl BenchConfig {
    pub fn for_design(design: &SyntheticDesign) -> Self {
        BenchConfig {
            kernel: design.default_kernel(),
            nu: design.default_nu(),
            taus: TauGrid::default(),
            reps: 1,
            baseline_rls: true,
            solver: SolverConfig::default(),
            delta: DEFAULT_DELTA,
            assemble: AssembleOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub tau_max: Option<f64>,
    pub tau_star: Option<f64>,
    /// 0-based.
    pub selected: Vec<usize>,
    pub selection_error: Option<f64>,
    pub test_rmse: Option<f64>,
    pub normalized_rmse: Option<f64>,
    pub lambda: Option<f64>,
    pub baseline_test_rmse: Option<f64>,
    pub baseline_normalized_rmse: Option<f64>,
    pub failed_taus: usize,
    pub unconverged_taus: usize,
    /// Variables with non-negligible derivative norm that were not selected at `τ*`.
    pub safe_filter_violations: usize,
    pub error: Option<String>,
}

impl RepRecord {
    fn failed(rep: usize, seed: u64, err: String) -> Self {
        RepRecord {
            rep,
            seed,
            tau_max: None,
            tau_star: None,
            selected: vec![],
            selection_error: None,
            test_rmse: None,
            normalized_rmse: None,
            lambda: None,
            baseline_test_rmse: None,
            baseline_normalized_rmse: None,
            failed_taus: 0,
            unconverged_taus: 0,
            safe_filter_violations: 0,
            error: Some(err),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

fn stat(values: impl Iterator<Item = Option<f64>>) -> Option<Stat> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        return None;
    }
    let arr = Array1::from(v);
    Some(Stat {
        mean: arr.mean().unwrap_or(f64::NAN),
        std: std_dev(arr.view()),
        count: arr.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub design: SyntheticDesign,
    pub kernel: Kernel,
    pub nu: f64,
    pub reps: usize,
    pub records: Vec<RepRecord>,
    pub selection_error: Option<Stat>,
    pub test_rmse: Option<Stat>,
    pub normalized_rmse: Option<Stat>,
    pub baseline_normalized_rmse: Option<Stat>,
    /// Fraction of successful repetitions selecting each variable.
    pub selection_frequency: Vec<f64>,
    pub partial: bool,
    /// Seconds per repetition; kept out of the serialized summary.
    #[serde(skip)]
    pub wall_times: Vec<f64>,
}

impl RunSummary {
    fn aggregate(design: &SyntheticDesign, cfg: &BenchConfig, results: Vec<(RepRecord, f64)>) -> Self {
        let (records, wall_times): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        let ok: Vec<&RepRecord> = records.iter().filter(|r| r.error.is_none()).collect();
        let mut freq = vec![0.0; design.d];
        for r in &ok {
            for &a in &r.selected {
                freq[a] += 1.0;
            }
        }
        if !ok.is_empty() {
            freq.iter_mut().for_each(|f| *f /= ok.len() as f64);
        }
        RunSummary {
            design: design.clone(),
            kernel: cfg.kernel,
            nu: cfg.nu,
            reps: cfg.reps,
            selection_error: stat(records.iter().map(|r| r.selection_error)),
            test_rmse: stat(records.iter().map(|r| r.test_rmse)),
            normalized_rmse: stat(records.iter().map(|r| r.normalized_rmse)),
            baseline_normalized_rmse: stat(records.iter().map(|r| r.baseline_normalized_rmse)),
            selection_frequency: freq,
            partial: ok.len() < records.len(),
            records,
            wall_times,
        }
    }

    /// Number of repetitions whose selected set equals `set` (0-based).
    pub fn count_selected_exactly(&self, set: &[usize]) -> usize {
        self.records
            .iter()
            .filter(|r| r.error.is_none() && r.selected == set)
            .count()
    }
}

/// Smallest `τ = τ₀ 2ᵏ` whose fit selects nothing, starting from a data-driven guess.
///
/// A probe whose inner prox cannot be certified says nothing about the selection
/// and is skipped over; such probes only occur far above the threshold, where the
/// dual problem is dominated by near-null directions of `L`.
pub fn find_tau_max(sys: &DerivativeSystem, data: &Dataset, cfg: &BenchConfig) -> Result<f64> {
    // Some(true): empty selection, None: not certified
    let probe = |tau: f64| -> Result<Option<bool>> {
        let scfg = SolverConfig {
            tau,
            nu: cfg.nu,
            warm_start: None,
            ..cfg.solver.clone()
        };
        match Solver::new(sys, data.y.view(), &scfg)?.fit() {
            Ok(st) => Ok(Some(select(sys, &st, cfg.delta)?.empty)),
            Err(Error::InnerNotCertified { .. }) => {
                log::debug!("tau probe {tau:e} not certified");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };
    let zty = sys.apply_zt(data.y.view())?;
    let n = sys.n();
    let guess = zty
        .exact_chunks(n)
        .into_iter()
        .map(crate::data::norm_n)
        .fold(0.0, f64::max);
    let mut tau = if guess > 0.0 { guess } else { 1.0 };
    const MAX_STEPS: usize = 60;
    if probe(tau)? == Some(false) {
        for _ in 0..MAX_STEPS {
            tau *= 2.0;
            if probe(tau)? != Some(false) {
                return Ok(tau);
            }
        }
        Err(Error::InvalidConfig("no tau up to 2^60 times the initial guess selects nothing".into()))
    } else {
        for _ in 0..MAX_STEPS {
            let lower = tau / 2.0;
            if probe(lower)? == Some(false) {
                return Ok(tau);
            }
            tau = lower;
        }
        Ok(tau)
    }
}

/// Geometric grid from `hi` down to `lo_frac · hi`.
pub fn descending_grid(hi: f64, lo_frac: f64, count: usize) -> Vec<f64> {
    let mut g = geometric_grid(lo_frac * hi, hi, count);
    g.reverse();
    g
}

/// Outcome of the two-step pipeline on fixed splits.
#[derive(Debug, Clone)]
pub struct TwoStepResult {
    pub tau_max: Option<f64>,
    pub tau_star: f64,
    pub selected: Vec<usize>,
    pub model: RlsModel,
    pub failed_taus: usize,
    pub unconverged_taus: usize,
    pub safe_filter_violations: usize,
}

/// Path fit on `train`, `τ*` by validation RMSE of the refit, ties to the larger `τ`.
pub fn two_step(train: &Dataset, val: &Dataset, cfg: &BenchConfig) -> Result<TwoStepResult> {
    let sys = DerivativeSystem::assemble_with(&cfg.kernel, train.x.view(), &cfg.assemble)?;
    let (taus, tau_max) = match &cfg.taus {
        TauGrid::Explicit(v) => {
            let mut v = v.clone();
            v.sort_by(|a, b| b.total_cmp(a));
            v.dedup();
            (v, None)
        }
        TauGrid::Auto { count, lo_frac } => {
            let tmax = find_tau_max(&sys, train, cfg)?;
            (descending_grid(tmax, *lo_frac, *count), Some(tmax))
        }
    };
    let template = SolverConfig {
        nu: cfg.nu,
        warm_start: None,
        ..cfg.solver.clone()
    };
    let mut path = fit_path(&sys, train.y.view(), &taus, &template, cfg.delta)?;
    let mut cache: HashMap<Vec<usize>, RlsModel> = HashMap::new();
    let mut best: Option<(f64, usize)> = None;
    let mut failed = 0;
    let mut unconverged = 0;
    for (idx, entry) in path.entries.iter_mut().enumerate() {
        let Some(sel) = &entry.selection else {
            failed += 1;
            continue;
        };
        if entry.state.as_ref().is_some_and(|s| !s.converged) {
            unconverged += 1;
        }
        let model = match cache.get(&sel.selected) {
            Some(m) => m.clone(),
            None => {
                let m = rls_fit(&cfg.kernel, train, &sel.selected, None, val)?;
                cache.insert(sel.selected.clone(), m.clone());
                m
            }
        };
        let score = model.validation_rmse.unwrap_or(f64::INFINITY);
        entry.validation_rmse = Some(score);
        if best.is_none_or(|(s, _)| score < s) {
            best = Some((score, idx));
        }
    }
    let (_, idx) = best.ok_or_else(|| Error::InvalidConfig("every tau on the path failed".into()))?;
    let entry = &path.entries[idx];
    let sel = entry.selection.as_ref().expect("scored entries have a selection");
    let state = entry.state.as_ref().expect("scored entries have a state");
    let violations = safe_filter_violations(sel, state).len();
    if violations > 0 {
        log::warn!("safe filter: {violations} variable(s) with nonzero derivative not selected at tau* = {}", entry.tau);
    }
    Ok(TwoStepResult {
        tau_max,
        tau_star: entry.tau,
        selected: sel.selected.clone(),
        model: cache[&sel.selected].clone(),
        failed_taus: failed,
        unconverged_taus: unconverged,
        safe_filter_violations: violations,
    })
}

fn run_rep(design: &SyntheticDesign, cfg: &BenchConfig, rep: usize) -> Result<RepRecord> {
    let seed = design.seed.wrapping_add(rep as u64);
    let rep_design = SyntheticDesign { seed, ..design.clone() };
    let (train, val, test) = rep_design.generate()?;
    let res = two_step(&train, &val, cfg)?;
    let sd = std_dev(test.y.view());
    let pred = res.model.predict_many(test.x.view())?;
    let test_rmse = rmse(pred.view(), test.y.view());
    let (baseline_test_rmse, baseline_normalized_rmse) = if cfg.baseline_rls {
        let all: Vec<usize> = (0..design.d).collect();
        let base = rls_fit(&cfg.kernel, &train, &all, None, &val)?;
        let r = rmse(base.predict_many(test.x.view())?.view(), test.y.view());
        (Some(r), Some(r / sd))
    } else {
        (None, None)
    };
    Ok(RepRecord {
        rep,
        seed,
        tau_max: res.tau_max,
        tau_star: Some(res.tau_star),
        selection_error: Some(selection_error(&res.selected, &design.truth, design.d)),
        selected: res.selected,
        test_rmse: Some(test_rmse),
        normalized_rmse: Some(test_rmse / sd),
        lambda: res.model.constant.is_none().then_some(res.model.lambda),
        baseline_test_rmse,
        baseline_normalized_rmse,
        failed_taus: res.failed_taus,
        unconverged_taus: res.unconverged_taus,
        safe_filter_violations: res.safe_filter_violations,
        error: None,
    })
}

/// Worker count from `DENOVAS_THREADS`, if set.
pub fn thread_cap() -> Option<usize> {
    std::env::var("DENOVAS_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&v| v > 0)
}

/// Run `cfg.reps` seeded repetitions (seed, seed+1, ...) in parallel.
pub fn run_benchmark(design: &SyntheticDesign, cfg: &BenchConfig) -> Result<RunSummary> {
    design.validate()?;
    cfg.kernel.validate()?;
    if cfg.reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    let job = || -> Vec<(RepRecord, f64)> {
        (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                let t0 = Instant::now();
                let rec = run_rep(design, cfg, rep).unwrap_or_else(|e| {
                    log::warn!("{} repetition {rep} failed: {e}", design.kind);
                    RepRecord::failed(rep, design.seed.wrapping_add(rep as u64), e.to_string())
                });
                (rec, t0.elapsed().as_secs_f64())
            })
            .collect()
    };
    let results = match thread_cap() {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(job),
        None => job(),
    };
    Ok(RunSummary::aggregate(design, cfg, results))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn set_string(sel: &[usize]) -> String {
    sel.iter().map(|a| format!("x{}", a + 1)).collect::<Vec<_>>().join(" ")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

/// One row per repetition.
pub fn write_reps_csv(path: &Path, summaries: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "design",
        "n",
        "nu",
        "rep",
        "seed",
        "tau_max",
        "tau_star",
        "selected",
        "selection_error",
        "test_rmse",
        "normalized_rmse",
        "lambda",
        "baseline_test_rmse",
        "baseline_normalized_rmse",
        "failed_taus",
        "unconverged_taus",
        "safe_filter_violations",
        "error",
    ])
    .map_err(csv_err)?;
    for s in summaries {
        for r in &s.records {
            w.write_record([
                s.design.kind.to_string(),
                s.design.n_train.to_string(),
                fmt_f64(s.nu),
                r.rep.to_string(),
                r.seed.to_string(),
                opt(r.tau_max),
                opt(r.tau_star),
                set_string(&r.selected),
                opt(r.selection_error),
                opt(r.test_rmse),
                opt(r.normalized_rmse),
                opt(r.lambda),
                opt(r.baseline_test_rmse),
                opt(r.baseline_normalized_rmse),
                r.failed_taus.to_string(),
                r.unconverged_taus.to_string(),
                r.safe_filter_violations.to_string(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Plot-ready long format: `x_name, x, series, metric, value`.
pub fn write_long_csv(path: &Path, summaries: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["x_name", "x", "series", "metric", "mean", "std", "count"])
        .map_err(csv_err)?;
    for s in summaries {
        let series = format!("{} nu={}", s.kernel, s.nu);
        let metrics = [
            ("selection_error", s.selection_error),
            ("test_rmse", s.test_rmse),
            ("normalized_rmse", s.normalized_rmse),
            ("baseline_normalized_rmse", s.baseline_normalized_rmse),
        ];
        for (name, st) in metrics {
            if let Some(st) = st {
                w.write_record([
                    "n".to_string(),
                    s.design.n_train.to_string(),
                    series.clone(),
                    name.to_string(),
                    fmt_f64(st.mean),
                    fmt_f64(st.std),
                    st.count.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_timings_csv(path: &Path, summaries: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["design", "n", "nu", "rep", "wall_time_s"]).map_err(csv_err)?;
    for s in summaries {
        for (r, t) in s.records.iter().zip(&s.wall_times) {
            w.write_record([
                s.design.kind.to_string(),
                s.design.n_train.to_string(),
                fmt_f64(s.nu),
                r.rep.to_string(),
                format!("{t:.3}"),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `reps.csv`, `summary.json`, `long.csv` and `timings.csv` into `dir`.
/// All but the timings are byte-identical for identical inputs.
pub fn write_outputs(dir: &Path, summaries: &[RunSummary]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_reps_csv(&dir.join("reps.csv"), summaries)?;
    write_long_csv(&dir.join("long.csv"), summaries)?;
    write_timings_csv(&dir.join("timings.csv"), summaries)?;
    let mut f = std::fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, summaries)?;
    f.write_all(b"\n")?;
    Ok(())
}
