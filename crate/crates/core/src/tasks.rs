//! Benchmark targets: NARMA, linear delay and information processing
//! capacity (IPC) with Legendre-product targets.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QrcError, Result};
use crate::learn::{DesignMatrix, LeastSquares};
use crate::output::{Cell, CsvTable};
use crate::seed;

/// NARMA values beyond this magnitude count as divergence.
pub const NARMA_DIVERGENCE: f64 = 1e3;
/// Enumerations larger than this are refused.
pub const MAX_IPC_TARGETS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputKind {
    Uniform { lo: f64, hi: f64 },
    Binary,
}

/// I.i.d. input sequence, deterministic per seed.
pub fn gen_input(kind: InputKind, length: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = seed::stream(seed);
    match kind {
        InputKind::Uniform { lo, hi } => {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(QrcError::Validation(format!("bad input range [{lo}, {hi}]")));
            }
            Ok((0..length).map(|_| rng.random_range(lo..=hi)).collect())
        }
        InputKind::Binary => Ok((0..length)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect()),
    }
}

/// NARMA-`n` target, with zero inputs and outputs before the first step.
pub fn narma_target(inputs: &[f64], n: usize) -> Result<Vec<f64>> {
    narma_with_constant(inputs, n, 0.1)
}

fn narma_with_constant(inputs: &[f64], n: usize, constant: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(QrcError::Validation("NARMA order must be >= 1".into()));
    }
    if inputs.iter().any(|s| !(0.0..=0.2).contains(s)) {
        log::warn!("NARMA inputs outside [0, 0.2] may diverge");
    }
    let at = |v: &[f64], k: usize, back: usize| if k >= back { v[k - back] } else { 0.0 };
    let mut y = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let prev = at(&y, k, 1);
        let window: f64 = (1..=n).map(|j| at(&y, k, j)).sum();
        let v = 0.3 * prev + 0.05 * prev * window + 1.5 * at(inputs, k, n) * at(inputs, k, 1) + constant;
        if !v.is_finite() || v.abs() > NARMA_DIVERGENCE {
            return Err(QrcError::Numeric(format!("NARMA{n} target diverged at step {k}")));
        }
        y.push(v);
    }
    Ok(y)
}

/// `ȳ_k = s_{k−τ}`, zero for `k < τ`.
pub fn delay_target(inputs: &[f64], tau: usize) -> Vec<f64> {
    (0..inputs.len())
        .map(|k| if k >= tau { inputs[k - tau] } else { 0.0 })
        .collect()
}

/// Legendre polynomial `P_degree(x)` by the Bonnet recurrence.
pub fn legendre_eval(degree: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    if degree == 0 {
        return p0;
    }
    for n in 1..degree {
        let nf = n as f64;
        let p2 = ((2.0 * nf + 1.0) * x * p1 - nf * p0) / (nf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// One factor `P_degree(s̃_{k−delay})` of an IPC target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IpcTerm {
    pub delay: usize,
    pub degree: usize,
}

/// Product of Legendre factors at distinct delays, sorted by delay.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IpcTarget(Vec<IpcTerm>);

impl IpcTarget {
    pub fn new(mut terms: Vec<IpcTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(QrcError::Validation("IPC target needs at least one term".into()));
        }
        terms.sort();
        if terms.windows(2).any(|w| w[0].delay == w[1].delay) {
            return Err(QrcError::Validation("IPC terms must have distinct delays".into()));
        }
        if terms.iter().any(|t| t.degree == 0) {
            return Err(QrcError::Validation("IPC term degrees must be >= 1".into()));
        }
        Ok(Self(terms))
    }

    pub fn terms(&self) -> &[IpcTerm] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|t| t.degree).sum()
    }

    pub fn max_delay(&self) -> usize {
        self.0.last().map_or(0, |t| t.delay)
    }

    /// Parses the notation produced by `Display`, e.g. `d1@0*d2@3`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || QrcError::Validation(format!("bad IPC target {text:?}"));
        let terms = text
            .split('*')
            .map(|part| {
                let (deg, delay) = part.trim().strip_prefix('d').ok_or_else(bad)?.split_once('@').ok_or_else(bad)?;
                Ok(IpcTerm {
                    delay: delay.parse().map_err(|_| bad())?,
                    degree: deg.parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(terms)
    }

    fn canonical_key(&self) -> (usize, Vec<usize>, Vec<usize>) {
        (
            self.degree(),
            self.0.iter().map(|t| t.delay).collect(),
            self.0.iter().map(|t| t.degree).collect(),
        )
    }

    /// `Π_i P_{d_i}(s̃_{k−delay_i})` for `k` in `start..s̃.len()`; needs
    /// `start ≥ max_delay`.
    pub fn values(&self, raw_inputs: &[f64], start: usize) -> Result<Vec<f64>> {
        if start < self.max_delay() {
            return Err(QrcError::Validation(format!(
                "target {self} reaches before the first sample at step {start}"
            )));
        }
        Ok((start..raw_inputs.len())
            .map(|k| {
                self.0
                    .iter()
                    .map(|t| legendre_eval(t.degree, raw_inputs[k - t.delay]))
                    .product()
            })
            .collect())
    }

    fn values_from_table(&self, table: &LegendreTable, start: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend((start..table.len).map(|k| {
            self.0
                .iter()
                .map(|t| table.get(t.degree, k - t.delay))
                .product::<f64>()
        }));
    }
}

impl fmt::Display for IpcTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, t) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str("*")?;
            }
            write!(f, "d{}@{}", t.degree, t.delay)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum TaskSpec {
    Narma { n: usize },
    Delay { tau: usize },
    IpcTarget { terms: Vec<IpcTerm> },
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            TaskSpec::Narma { n } if *n == 0 => {
                Err(QrcError::Validation("NARMA order must be >= 1".into()))
            }
            TaskSpec::IpcTarget { terms } => IpcTarget::new(terms.clone()).map(|_| ()),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            TaskSpec::Narma { n } => format!("narma{n}"),
            TaskSpec::Delay { tau } => format!("delay{tau}"),
            TaskSpec::IpcTarget { terms } => match IpcTarget::new(terms.clone()) {
                Ok(t) => format!("ipc_{t}"),
                Err(_) => "ipc_invalid".into(),
            },
        }
    }

    /// Target series for reservoir inputs `s ∈ [0, 1]`. IPC targets see
    /// `s̃ = 2s − 1` and are zero wherever they would reach before step 0.
    pub fn target(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        match self {
            TaskSpec::Narma { n } => narma_target(inputs, *n),
            TaskSpec::Delay { tau } => Ok(delay_target(inputs, *tau)),
            TaskSpec::IpcTarget { terms } => {
                let target = IpcTarget::new(terms.clone())?;
                let raw: Vec<f64> = inputs.iter().map(|s| 2.0 * s - 1.0).collect();
                let start = target.max_delay().min(raw.len());
                let mut y = vec![0.0; start];
                y.extend(target.values(&raw, start)?);
                Ok(y)
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Number of degree-`d` targets whose delays lie in `0..window`.
pub fn count_targets(degree: usize, window: usize) -> f64 {
    (1..=degree.min(window))
        .map(|k| binomial(window, k) * binomial(degree - 1, k - 1))
        .sum()
}

fn targets_of_degree(degree: usize, window: usize) -> Vec<IpcTarget> {
    fn rec(start: usize, remaining: usize, window: usize, cur: &mut Vec<IpcTerm>, out: &mut Vec<IpcTarget>) {
        for delay in start..window {
            for deg in 1..=remaining {
                cur.push(IpcTerm { delay, degree: deg });
                if deg == remaining {
                    out.push(IpcTarget(cur.clone()));
                } else {
                    rec(delay + 1, remaining - deg, window, cur, out);
                }
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(0, degree, window, &mut Vec::new(), &mut out);
    out.sort_by_key(|t| t.canonical_key());
    out
}

/// Default maximum delay window per degree: 100, 30, then 15.
pub fn default_window(degree: usize) -> usize {
    match degree {
        1 => 100,
        2 => 30,
        _ => 15,
    }
}

pub fn default_windows(d_max: usize) -> BTreeMap<usize, usize> {
    (1..=d_max).map(|d| (d, default_window(d))).collect()
}

/// All targets of degree `1..=d_max`, ascending degree, then lexicographic in
/// delays. Degrees missing from `windows` use [`default_window`].
pub fn enumerate_ipc_targets(d_max: usize, windows: &BTreeMap<usize, usize>) -> Result<Vec<IpcTarget>> {
    if d_max == 0 {
        return Err(QrcError::Validation("d_max must be >= 1".into()));
    }
    let window = |d| windows.get(&d).copied().unwrap_or_else(|| default_window(d));
    let total: f64 = (1..=d_max).map(|d| count_targets(d, window(d))).sum();
    if total > MAX_IPC_TARGETS as f64 {
        return Err(QrcError::Size(format!(
            "{total:.0} IPC targets exceed the limit of {MAX_IPC_TARGETS}; reduce the delay windows"
        )));
    }
    Ok((1..=d_max).flat_map(|d| targets_of_degree(d, window(d))).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ThresholdMode {
    /// 99.9th percentile of capacities against targets built from independent
    /// inputs, per degree.
    Surrogate { samples_per_degree: usize, seed: u64 },
    /// `2 (O + 1) / L` for every degree.
    Analytic,
    None,
}

impl Default for ThresholdMode {
    fn default() -> Self {
        ThresholdMode::Surrogate {
            samples_per_degree: 1000,
            seed: 0,
        }
    }
}

pub const SURROGATE_QUANTILE: f64 = 0.999;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpcConfig {
    pub d_max: usize,
    pub windows: BTreeMap<usize, usize>,
    pub washout: usize,
    pub threshold_mode: ThresholdMode,
    /// A degree stops growing its delay window after this many consecutive
    /// max-delay blocks whose summed capacity is below the degree threshold.
    /// Zero disables early stopping.
    pub patience: usize,
}

impl Default for IpcConfig {
    fn default() -> Self {
        Self {
            d_max: 6,
            windows: default_windows(6),
            washout: 1000,
            threshold_mode: ThresholdMode::default(),
            patience: 2,
        }
    }
}

impl IpcConfig {
    fn window(&self, degree: usize) -> usize {
        self.windows
            .get(&degree)
            .copied()
            .unwrap_or_else(|| default_window(degree))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetCapacity {
    pub target: String,
    pub degree: usize,
    pub raw_capacity: f64,
    pub passed_threshold: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub per_target: Vec<TargetCapacity>,
    pub per_degree: BTreeMap<usize, f64>,
    pub total: f64,
    pub normalized_total: f64,
    pub threshold_table: BTreeMap<usize, f64>,
    pub n_variables: usize,
    pub n_samples: usize,
    /// Largest delay evaluated per degree after early stopping.
    pub max_delay_reached: BTreeMap<usize, usize>,
}

impl CapacityReport {
    pub fn counted(&self, degree: usize) -> usize {
        self.per_target
            .iter()
            .filter(|t| t.degree == degree && t.passed_threshold)
            .count()
    }

    pub fn degree_csv(&self) -> String {
        let mut t = CsvTable::new(&["degree", "capacity", "threshold", "n_targets_counted"]);
        for (&d, &c) in &self.per_degree {
            t.push_row(&[
                Cell::from(d),
                Cell::from(c),
                Cell::from(self.threshold_table.get(&d).copied().unwrap_or(0.0)),
                Cell::from(self.counted(d)),
            ]);
        }
        t.into_string()
    }

    pub fn targets_csv(&self) -> String {
        let mut t = CsvTable::new(&["target", "degree", "raw_capacity", "passed_threshold"]);
        for c in &self.per_target {
            t.push_row(&[
                Cell::from(c.target.as_str()),
                Cell::from(c.degree),
                Cell::from(c.raw_capacity),
                Cell::from(usize::from(c.passed_threshold)),
            ]);
        }
        t.into_string()
    }
}

/// `P_d(s̃_j)` for every degree up to `d_max` and every step.
struct LegendreTable {
    len: usize,
    values: Vec<f64>,
}

impl LegendreTable {
    fn new(raw: &[f64], d_max: usize) -> Self {
        let mut values = Vec::with_capacity((d_max + 1) * raw.len());
        for d in 0..=d_max {
            values.extend(raw.iter().map(|&x| legendre_eval(d, x)));
        }
        Self {
            len: raw.len(),
            values,
        }
    }

    #[inline]
    fn get(&self, degree: usize, k: usize) -> f64 {
        self.values[degree * self.len + k]
    }
}

/// `1 − min_w MSE / ⟨ȳ²⟩`, which for a least-squares fit equals the fraction
/// of `‖ȳ‖²` captured by the column space of the design matrix.
fn capacity_of(ls: &LeastSquares, y: &[f64]) -> f64 {
    let energy: f64 = y.iter().map(|v| v * v).sum();
    if energy <= 0.0 {
        return 0.0;
    }
    (ls.explained_energy(y) / energy).clamp(0.0, 1.0)
}

fn evaluate(ls: &LeastSquares, table: &LegendreTable, start: usize, targets: &[IpcTarget]) -> Vec<f64> {
    targets
        .par_iter()
        .map_init(Vec::new, |buf, t| {
            t.values_from_table(table, start, buf);
            capacity_of(ls, buf)
        })
        .collect()
}

/// Nearest-rank quantile of unsorted values.
fn quantile(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

#[allow(clippy::too_many_arguments)]
fn surrogate_threshold(
    ls: &LeastSquares,
    targets: &[IpcTarget],
    len: usize,
    start: usize,
    d_max: usize,
    samples: usize,
    seed: u64,
    degree: usize,
) -> Result<f64> {
    if targets.is_empty() || samples == 0 {
        return Ok(0.0);
    }
    let stride = (targets.len() / samples).max(1);
    let picked: Vec<IpcTarget> = targets.iter().step_by(stride).take(samples).cloned().collect();
    let rounds = samples.div_ceil(picked.len());
    let mut caps = Vec::with_capacity(rounds * picked.len());
    for r in 0..rounds {
        let stream_seed = seed::derive_seed(seed, &[seed::tag::SURROGATE, degree as u64, r as u64]);
        let raw = gen_input(InputKind::Uniform { lo: -1.0, hi: 1.0 }, len, stream_seed)?;
        let table = LegendreTable::new(&raw, d_max);
        caps.extend(evaluate(ls, &table, start, &picked));
    }
    Ok(quantile(&mut caps, SURROGATE_QUANTILE))
}

/// Capacities of Legendre-product targets of the raw input `s̃ ∈ [−1, 1]`
/// that drove the reservoir, fitted on the rows after the washout.
pub fn ipc_capacity(x: &DesignMatrix, raw_inputs: &[f64], config: &IpcConfig) -> Result<CapacityReport> {
    if raw_inputs.len() != x.rows() {
        return Err(QrcError::Shape(format!(
            "{} inputs for {} design rows",
            raw_inputs.len(),
            x.rows()
        )));
    }
    if raw_inputs.iter().any(|s| !(-1.0..=1.0).contains(s)) {
        return Err(QrcError::Validation("IPC inputs must lie in [-1, 1]".into()));
    }
    if config.d_max == 0 {
        return Err(QrcError::Validation("d_max must be >= 1".into()));
    }
    let start = config.washout;
    if start >= x.rows() {
        return Err(QrcError::Validation(format!(
            "washout {start} leaves no samples out of {}",
            x.rows()
        )));
    }
    let widest = (1..=config.d_max).map(|d| config.window(d)).max().unwrap_or(0);
    if widest > start + 1 {
        return Err(QrcError::Validation(format!(
            "washout {start} is shorter than the widest delay window {widest}"
        )));
    }
    let targets = enumerate_ipc_targets(config.d_max, &config.windows)?;
    let n_samples = x.rows() - start;
    let n_variables = x.n_features();
    let ls = LeastSquares::new(&x.slice_rows(start, x.rows())?)?;
    let table = LegendreTable::new(raw_inputs, config.d_max);

    let mut by_degree: BTreeMap<usize, Vec<IpcTarget>> = BTreeMap::new();
    for t in targets {
        by_degree.entry(t.degree()).or_default().push(t);
    }

    let mut threshold_table = BTreeMap::new();
    for (&d, ts) in &by_degree {
        let th = match config.threshold_mode {
            ThresholdMode::Surrogate { samples_per_degree, seed } => surrogate_threshold(
                &ls,
                ts,
                x.rows(),
                start,
                config.d_max,
                samples_per_degree,
                seed,
                d,
            )?,
            ThresholdMode::Analytic => 2.0 * (n_variables + 1) as f64 / n_samples as f64,
            ThresholdMode::None => 0.0,
        };
        threshold_table.insert(d, th);
    }

    let mut per_target = Vec::new();
    let mut per_degree = BTreeMap::new();
    let mut max_delay_reached = BTreeMap::new();
    for (&d, ts) in &by_degree {
        let th = threshold_table[&d];
        let mut blocks: BTreeMap<usize, Vec<IpcTarget>> = BTreeMap::new();
        for t in ts {
            blocks.entry(t.max_delay()).or_default().push(t.clone());
        }
        let mut sum = 0.0;
        let mut quiet = 0;
        let mut reached = 0;
        for (&m, block) in &blocks {
            reached = m;
            let caps = evaluate(&ls, &table, start, block);
            let mut block_sum = 0.0;
            for (t, &c) in block.iter().zip(&caps) {
                let passed = c >= th && c > 0.0;
                if passed {
                    block_sum += c;
                }
                per_target.push((t.clone(), c, passed));
            }
            sum += block_sum;
            quiet = if block_sum > th { 0 } else { quiet + 1 };
            if config.patience > 0 && quiet >= config.patience {
                break;
            }
        }
        per_degree.insert(d, sum);
        max_delay_reached.insert(d, reached);
    }

    per_target.sort_by_key(|(t, _, _)| t.canonical_key());
    let total: f64 = per_degree.values().sum();
    Ok(CapacityReport {
        per_target: per_target
            .into_iter()
            .map(|(t, c, passed)| TargetCapacity {
                degree: t.degree(),
                target: t.to_string(),
                raw_capacity: c,
                passed_threshold: passed,
            })
            .collect(),
        per_degree,
        total,
        normalized_total: if n_variables > 0 { total / n_variables as f64 } else { 0.0 },
        threshold_table,
        n_variables,
        n_samples,
        max_delay_reached,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn input_generation() {
        let u = gen_input(InputKind::Uniform { lo: 0.0, hi: 0.2 }, 1000, 1).unwrap();
        assert!(u.iter().all(|s| (0.0..=0.2).contains(s)));
        assert_eq!(u, gen_input(InputKind::Uniform { lo: 0.0, hi: 0.2 }, 1000, 1).unwrap());
        let b = gen_input(InputKind::Binary, 1000, 2).unwrap();
        assert!(b.iter().all(|&s| s == 0.0 || s == 1.0));
        assert!(b.contains(&1.0) && b.contains(&0.0));
        let m = gen_input(InputKind::Uniform { lo: 0.0, hi: 1.0 }, 100_000, 3).unwrap();
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        assert!((mean - 0.5).abs() < 0.005);
        assert!(gen_input(InputKind::Uniform { lo: 0.5, hi: 0.5 }, 10, 0).is_err());
    }

    #[test]
    fn narma_examples() {
        let zeros = vec![0.0; 2000];
        let y = narma_target(&zeros, 10).unwrap();
        assert_eq!(y[0], 0.1);
        // Stationary point of y = 0.3y + 0.5y² + 0.1.
        let fixed = 0.7 - (0.49f64 - 0.2).sqrt();
        assert!((y[1999] - fixed).abs() < 1e-12, "{} vs {fixed}", y[1999]);
        assert!((fixed - 0.1615).abs() < 1e-4);
        assert!(narma_with_constant(&zeros, 10, 0.0).unwrap().iter().all(|&v| v == 0.0));

        let s = gen_input(InputKind::Uniform { lo: 0.0, hi: 0.2 }, 10_000, 4).unwrap();
        let y = narma_target(&s, 10).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1.0));
        // Hand-evaluated second step with n = 1.
        let y = narma_target(&[0.2, 0.1], 1).unwrap();
        let expected = 0.3 * 0.1 + 0.05 * 0.1 * 0.1 + 1.5 * 0.2 * 0.2 + 0.1;
        assert!((y[1] - expected).abs() < 1e-15);
        assert!(narma_target(&[0.0], 0).is_err());
    }

    #[test]
    fn narma_divergence_names_the_step() {
        let err = narma_target(&vec![1.0; 200], 10).unwrap_err();
        assert!(matches!(err, QrcError::Numeric(ref m) if m.contains("step")));
    }

    #[test]
    fn delay_examples() {
        let s: Vec<f64> = (0..20).map(|k| k as f64 * 0.01).collect();
        assert_eq!(delay_target(&s, 0), s);
        assert_eq!(delay_target(&s, 10)[10], s[0]);
        assert!(delay_target(&s, 20).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn legendre_examples() {
        assert_eq!(legendre_eval(0, 0.7), 1.0);
        assert_eq!(legendre_eval(1, 0.3), 0.3);
        assert!((legendre_eval(2, 0.5) + 0.125).abs() < 1e-15);
        // P₃(x) = (5x³ − 3x)/2.
        let x = 0.37f64;
        assert!((legendre_eval(3, x) - (5.0 * x.powi(3) - 3.0 * x) / 2.0).abs() < 1e-15);
        for d in 0..8 {
            assert!((legendre_eval(d, 1.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn legendre_empirical_orthogonality() {
        let x = gen_input(InputKind::Uniform { lo: -1.0, hi: 1.0 }, 100_000, 5).unwrap();
        for i in 0..=6 {
            for j in 0..=6 {
                let m = x.iter().map(|&v| legendre_eval(i, v) * legendre_eval(j, v)).sum::<f64>() / x.len() as f64;
                if i == j {
                    let exact = 1.0 / (2 * i + 1) as f64;
                    assert!((m - exact).abs() < 0.1 * exact, "P{i}²: {m}");
                } else {
                    assert!(m.abs() < 0.01, "P{i}P{j}: {m}");
                }
            }
        }
    }

    fn windows(pairs: &[(usize, usize)]) -> BTreeMap<usize, usize> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn enumeration_examples() {
        let t = enumerate_ipc_targets(1, &windows(&[(1, 3)])).unwrap();
        let names: Vec<String> = t.iter().map(|t| t.to_string()).collect();
        assert_eq!(names, ["d1@0", "d1@1", "d1@2"]);

        let t = enumerate_ipc_targets(2, &windows(&[(1, 0), (2, 2)])).unwrap();
        let names: Vec<String> = t.iter().map(|t| t.to_string()).collect();
        assert_eq!(names, ["d2@0", "d1@0*d1@1", "d2@1"]);

        let t = enumerate_ipc_targets(6, &windows(&[(1, 2), (2, 2), (3, 2), (4, 2), (5, 2), (6, 2)])).unwrap();
        assert!(t.iter().any(|t| t.degree() == 6));
        assert!(enumerate_ipc_targets(0, &BTreeMap::new()).is_err());
        let huge = enumerate_ipc_targets(6, &windows(&[(6, 200)]));
        assert!(matches!(huge, Err(QrcError::Size(_))));
    }

    /// Every multiset of (delay, degree) pairs built by brute force over all
    /// degree assignments to the window.
    fn brute_force(degree: usize, window: usize) -> Vec<String> {
        let mut out = Vec::new();
        let mut assign = vec![0usize; window];
        loop {
            if assign.iter().sum::<usize>() == degree {
                let terms: Vec<IpcTerm> = assign
                    .iter()
                    .enumerate()
                    .filter(|(_, &d)| d > 0)
                    .map(|(delay, &d)| IpcTerm { delay, degree: d })
                    .collect();
                out.push(IpcTarget::new(terms).unwrap().to_string());
            }
            let mut k = 0;
            loop {
                if k == window {
                    out.sort();
                    return out;
                }
                assign[k] += 1;
                if assign[k] <= degree {
                    break;
                }
                assign[k] = 0;
                k += 1;
            }
        }
    }

    #[test]
    fn enumeration_matches_brute_force_and_count() {
        for degree in 1..=4 {
            for window in 1..=5 {
                let mut got: Vec<String> = targets_of_degree(degree, window).iter().map(|t| t.to_string()).collect();
                assert_eq!(got.len() as f64, count_targets(degree, window));
                got.sort();
                assert_eq!(got, brute_force(degree, window), "degree {degree}, window {window}");
            }
        }
    }

    #[test]
    fn target_notation_round_trips() {
        let t = IpcTarget::parse("d1@0*d2@3").unwrap();
        assert_eq!(t.degree(), 3);
        assert_eq!(t.max_delay(), 3);
        assert_eq!(t.to_string(), "d1@0*d2@3");
        assert!(IpcTarget::parse("d1@0*d1@0").is_err());
        assert!(IpcTarget::parse("d0@1").is_err());
        assert!(IpcTarget::parse("x").is_err());
    }

    #[test]
    fn task_spec_targets() {
        let s = gen_input(InputKind::Uniform { lo: 0.0, hi: 0.2 }, 50, 1).unwrap();
        assert_eq!(TaskSpec::Delay { tau: 3 }.target(&s).unwrap(), delay_target(&s, 3));
        assert_eq!(TaskSpec::Narma { n: 10 }.target(&s).unwrap(), narma_target(&s, 10).unwrap());
        assert!(TaskSpec::Narma { n: 0 }.validate().is_err());
        let spec = TaskSpec::IpcTarget {
            terms: vec![IpcTerm { delay: 1, degree: 1 }],
        };
        let y = spec.target(&[0.0, 1.0, 0.25]).unwrap();
        assert_eq!(y, vec![0.0, -1.0, 1.0]);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<TaskSpec>(&json).unwrap(), spec);
        assert_eq!(spec.name(), "ipc_d1@1");
    }

    fn delay_line(raw: &[f64], depth: usize) -> DesignMatrix {
        let labels = (0..depth).map(|j| format!("lag{j}")).collect();
        let mut x = DesignMatrix::new(labels);
        for k in 0..raw.len() {
            let row: Vec<f64> = (0..depth).map(|j| if k >= j { raw[k - j] } else { 0.0 }).collect();
            x.push_row(&row).unwrap();
        }
        x
    }

    fn small_config(mode: ThresholdMode) -> IpcConfig {
        IpcConfig {
            d_max: 3,
            windows: windows(&[(1, 30), (2, 12), (3, 8)]),
            washout: 100,
            threshold_mode: mode,
            patience: 0,
        }
    }

    #[test]
    fn delay_line_capacity_is_exact() {
        let raw = gen_input(InputKind::Uniform { lo: -1.0, hi: 1.0 }, 5100, 7).unwrap();
        let x = delay_line(&raw, 10);
        let report = ipc_capacity(&x, &raw, &small_config(ThresholdMode::default())).unwrap();
        for t in report.per_target.iter().filter(|t| t.degree == 1) {
            let delay: usize = t.target.trim_start_matches("d1@").parse().unwrap();
            if delay < 10 {
                assert!((t.raw_capacity - 1.0).abs() < 1e-10, "{}", t.target);
                assert!(t.passed_threshold);
            } else {
                assert!(t.raw_capacity < 0.01, "{}: {}", t.target, t.raw_capacity);
            }
        }
        assert!((report.per_degree[&1] - 10.0).abs() < 0.05, "{:?}", report.per_degree);
        assert!((report.total - 10.0).abs() < 0.1, "total {}", report.total);
        assert!((report.normalized_total - report.total / 10.0).abs() < 1e-15);
        assert!(report.total <= 10.0 * 1.01);
        let csv = report.degree_csv();
        assert!(csv.starts_with("degree,capacity,threshold,n_targets_counted\n1,"));
        assert!(report.counted(1) >= 10);
    }

    #[test]
    fn surrogate_inputs_carry_no_capacity() {
        let raw = gen_input(InputKind::Uniform { lo: -1.0, hi: 1.0 }, 5100, 8).unwrap();
        let unrelated = gen_input(InputKind::Uniform { lo: -1.0, hi: 1.0 }, 5100, 9).unwrap();
        let x = delay_line(&unrelated, 10);
        let report = ipc_capacity(&x, &raw, &small_config(ThresholdMode::default())).unwrap();
        assert!(report.total < 0.1, "total {}", report.total);
        let analytic = ipc_capacity(&x, &raw, &small_config(ThresholdMode::Analytic)).unwrap();
        assert!(analytic.total < 0.1);
        assert!((analytic.threshold_table[&1] - 22.0 / 5000.0).abs() < 1e-15);
    }

    #[test]
    fn early_stop_truncates_empty_families() {
        let raw = gen_input(InputKind::Uniform { lo: -1.0, hi: 1.0 }, 3100, 10).unwrap();
        let x = delay_line(&raw, 5);
        let mut config = small_config(ThresholdMode::default());
        config.patience = 2;
        let report = ipc_capacity(&x, &raw, &config).unwrap();
        assert!((report.per_degree[&1] - 5.0).abs() < 0.05);
        assert!(report.max_delay_reached[&1] < 29);
        assert!(report.max_delay_reached[&1] >= 6);
    }

    #[test]
    fn ipc_rejects_bad_inputs() {
        let raw = gen_input(InputKind::Uniform { lo: -1.0, hi: 1.0 }, 300, 11).unwrap();
        let x = delay_line(&raw, 3);
        let mut config = small_config(ThresholdMode::None);
        config.washout = 300;
        assert!(ipc_capacity(&x, &raw, &config).is_err());
        config.washout = 5;
        assert!(ipc_capacity(&x, &raw, &config).is_err());
        config.washout = 100;
        assert!(ipc_capacity(&x, &raw[..299], &config).is_err());
        let shifted: Vec<f64> = raw.iter().map(|v| v + 1.5).collect();
        assert!(ipc_capacity(&x, &shifted, &config).is_err());
    }

    proptest! {
        #[test]
        fn legendre_bounded_on_interval(d in 0usize..12, x in -1.0f64..=1.0) {
            prop_assert!(legendre_eval(d, x).abs() <= 1.0 + 1e-12);
        }

        #[test]
        fn realizable_targets_have_unit_capacity(seed in 0u64..200, a in -2.0f64..2.0, b in 0.1f64..2.0) {
            let raw = gen_input(InputKind::Uniform { lo: -1.0, hi: 1.0 }, 400, seed).unwrap();
            let x = delay_line(&raw, 3);
            let ls = LeastSquares::new(&x).unwrap();
            let y: Vec<f64> = (0..400).map(|k| a * x.get(k, 0) + b * x.get(k, 2)).collect();
            prop_assert!((capacity_of(&ls, &y) - 1.0).abs() < 1e-10);
        }
    }
}
