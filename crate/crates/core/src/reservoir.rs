//! Input injection, unitary evolution and measurement of the spin reservoir.
//!
//! One time step resets qubit 1 to the input state and lets the whole network
//! evolve for `dt`:
//!
//! `ρ_k = U (|ψ_s⟩⟨ψ_s| ⊗ Tr₁ ρ_{k−1}) U†`, `|ψ_s⟩ = √(1−s)|0⟩ + √s|1⟩`.
//!
//! Since `|ψ_s⟩` is real, `U (|ψ_s⟩ ⊗ 1) = √(1−s) U₀ + √s U₁ =: W` where `U₀`
//! and `U₁` are the left and right column halves of `U`, and the step reduces
//! to `W σ W†` with `σ = Tr₁ ρ`. That is the fast path; the explicit two-stage
//! form is used when conserved quantities are recorded between the stages.

use std::collections::HashSet;
use std::sync::Arc;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use serde::{Deserialize, Serialize};

use crate::error::{QrcError, Result};
use crate::learn::DesignMatrix;
use crate::linalg::{
    frobenius_distance, hermitian_eig, kron, partial_trace_first, propagator,
    random_density_matrix, ComplexMatrix, DensityMatrix, EigenSystem, C64,
};
use crate::output::{Cell, CsvTable};
use crate::seed;
use crate::spin_model::{build_hamiltonian, default_observables, DisorderRealization, ObservableDescriptor};

pub const DEFAULT_DT: f64 = 10.0;
/// Largest imaginary part tolerated in a measured expectation value.
pub const MEASURE_IMAG_TOL: f64 = 1e-10;
/// Distances below this are reported at this value.
pub const DISTANCE_FLOOR: f64 = 1e-8;

fn check_input(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(QrcError::Validation(format!("input {s} outside [0, 1]")));
    }
    Ok(())
}

/// `|ψ_s⟩⟨ψ_s|` on one qubit.
pub fn encode_input(s: f64) -> Result<DensityMatrix> {
    check_input(s)?;
    let amp = [C64::new((1.0 - s).sqrt(), 0.0), C64::new(s.sqrt(), 0.0)];
    DensityMatrix::from_pure(&amp)
}

#[derive(Clone, Debug)]
pub struct ReservoirConfig {
    pub dt: f64,
    pub observables: Vec<ObservableDescriptor>,
    pub realization: DisorderRealization,
}

impl ReservoirConfig {
    /// Default time step and the full single-site plus `zz` observable set.
    pub fn new(realization: DisorderRealization) -> Self {
        Self {
            dt: DEFAULT_DT,
            observables: default_observables(realization.n_spins()),
            realization,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(QrcError::Validation(format!("dt must be > 0, got {}", self.dt)));
        }
        validate_observables(&self.observables, self.realization.n_spins())
    }

    pub fn labels(&self) -> Vec<String> {
        self.observables.iter().map(|o| o.label()).collect()
    }
}

fn validate_observables(obs: &[ObservableDescriptor], n_spins: usize) -> Result<()> {
    if obs.is_empty() {
        return Err(QrcError::Validation("observable list is empty".into()));
    }
    let mut seen = HashSet::new();
    for o in obs {
        o.validate(n_spins)?;
        if !seen.insert(o.label()) {
            return Err(QrcError::Validation(format!("duplicate observable {}", o.label())));
        }
    }
    Ok(())
}

/// Hamiltonian, its eigensystem and the propagator for one time step.
///
/// Shared read-only between all trajectories of a realization.
#[derive(Clone, Debug)]
pub struct Dynamics {
    n_spins: usize,
    hamiltonian: Arc<ComplexMatrix>,
    eig: Arc<EigenSystem>,
    dt: f64,
    u: ComplexMatrix,
}

impl Dynamics {
    /// Diagonalizes `H` of `realization`. `dt = 0` gives the identity map.
    pub fn new(realization: &DisorderRealization, dt: f64) -> Result<Self> {
        let h = build_hamiltonian(realization)?;
        let eig = hermitian_eig(&h)?;
        Self::from_parts(realization.n_spins(), Arc::new(h), Arc::new(eig), dt)
    }

    fn from_parts(
        n_spins: usize,
        hamiltonian: Arc<ComplexMatrix>,
        eig: Arc<EigenSystem>,
        dt: f64,
    ) -> Result<Self> {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(QrcError::Validation(format!("dt must be >= 0, got {dt}")));
        }
        let u = propagator(&eig, dt)?;
        Ok(Self {
            n_spins,
            hamiltonian,
            eig,
            dt,
            u,
        })
    }

    /// Same Hamiltonian, new time step; only the propagator is recomputed.
    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        Self::from_parts(self.n_spins, self.hamiltonian.clone(), self.eig.clone(), dt)
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        1 << self.n_spins
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn hamiltonian(&self) -> &ComplexMatrix {
        &self.hamiltonian
    }

    pub fn eigensystem(&self) -> &EigenSystem {
        &self.eig
    }

    pub fn propagator(&self) -> &ComplexMatrix {
        &self.u
    }

    /// `‖U U† − 1‖_max`.
    pub fn unitarity_defect(&self) -> f64 {
        let uu = self.u.conjugate_by(&ComplexMatrix::identity(self.dim()));
        uu.and_then(|m| m.max_abs_diff(&ComplexMatrix::identity(self.dim())))
            .unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Debug)]
pub struct ReservoirState {
    rho: DensityMatrix,
    dynamics: Arc<Dynamics>,
}

impl ReservoirState {
    pub fn new(dynamics: Arc<Dynamics>, rho: DensityMatrix) -> Result<Self> {
        if rho.dim() != dynamics.dim() {
            return Err(QrcError::Shape(format!(
                "state of dimension {} for a {}-spin reservoir",
                rho.dim(),
                dynamics.n_spins()
            )));
        }
        Ok(Self { rho, dynamics })
    }

    pub fn rho(&self) -> &DensityMatrix {
        &self.rho
    }

    pub fn dynamics(&self) -> &Arc<Dynamics> {
        &self.dynamics
    }

    /// Replaces qubit 1 by the encoded input without evolving.
    pub fn inject(&mut self, s: f64) -> Result<()> {
        let input = encode_input(s)?;
        let rest = partial_trace_first(&self.rho, 2)?;
        let mut m = kron(input.matrix(), rest.matrix())?;
        m.hermitize();
        self.rho = DensityMatrix::new_unchecked(m);
        Ok(())
    }

    /// Conjugates the state by the cached propagator.
    pub fn evolve(&mut self) -> Result<()> {
        let mut m = self.dynamics.u.conjugate_by(self.rho.matrix())?;
        m.hermitize();
        self.rho = DensityMatrix::new_unchecked(m);
        Ok(())
    }

    /// One full time step, `inject` followed by `evolve`, computed in fused form.
    pub fn step(&mut self, s: f64) -> Result<()> {
        check_input(s)?;
        let d = self.dynamics.dim();
        let half = d / 2;
        let r = self.rho.matrix().as_faer();
        let sigma = r.submatrix(0, 0, half, half) + r.submatrix(half, half, half, half);
        let u = self.dynamics.u.as_faer();
        let (a, b) = ((1.0 - s).sqrt(), s.sqrt());
        let w = Mat::<C64>::from_fn(d, half, |i, j| u[(i, j)] * a + u[(i, j + half)] * b);
        let one = C64::new(1.0, 0.0);
        let mut t = Mat::<C64>::zeros(d, half);
        matmul(t.as_mut(), Accum::Replace, w.as_ref(), sigma.as_ref(), one, Par::Seq);
        let mut out = Mat::<C64>::zeros(d, d);
        matmul(out.as_mut(), Accum::Replace, t.as_ref(), w.adjoint(), one, Par::Seq);
        let mut m = ComplexMatrix::from_faer(out);
        m.hermitize();
        self.rho = DensityMatrix::new_unchecked(m);
        Ok(())
    }

    /// `Tr[O ρ]` for each descriptor, in order.
    pub fn measure(&self, observables: &[ObservableDescriptor]) -> Result<Vec<f64>> {
        let n = self.dynamics.n_spins();
        let h = Some(self.dynamics.hamiltonian());
        observables
            .iter()
            .map(|o| {
                let v = o.expectation(self.rho.matrix(), n, h)?;
                if v.im.abs() > MEASURE_IMAG_TOL {
                    return Err(QrcError::Numeric(format!(
                        "expectation of {} has imaginary part {:e}",
                        o.label(),
                        v.im
                    )));
                }
                Ok(v.re)
            })
            .collect()
    }
}

/// Functional form of [`ReservoirState::step`].
pub fn inject_and_evolve(mut state: ReservoirState, s: f64) -> Result<ReservoirState> {
    state.step(s)?;
    Ok(state)
}

pub fn measure(state: &ReservoirState, observables: &[ObservableDescriptor]) -> Result<Vec<f64>> {
    state.measure(observables)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "seed")]
pub enum NamedInitialState {
    AllUpZ,
    AllDownZ,
    /// `|0⟩` on the first `N/2` spins, `|1⟩` on the rest.
    HalfHalfZ,
    /// `|+⟩` on the first `N/2` spins, `|−⟩` on the rest.
    HalfHalfX,
    /// `|+⟩^⊗N`, i.e. `ρ_ij = 2^{−N}` for all `i, j`.
    MaximalCoherent,
    Random(u64),
}

impl NamedInitialState {
    pub fn name(&self) -> String {
        match self {
            Self::AllUpZ => "all_up_z".into(),
            Self::AllDownZ => "all_down_z".into(),
            Self::HalfHalfZ => "half_half_z".into(),
            Self::HalfHalfX => "half_half_x".into(),
            Self::MaximalCoherent => "maximal_coherent".into(),
            Self::Random(seed) => format!("random_{seed}"),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(match text {
            "all_up_z" => Self::AllUpZ,
            "all_down_z" => Self::AllDownZ,
            "half_half_z" => Self::HalfHalfZ,
            "half_half_x" => Self::HalfHalfX,
            "maximal_coherent" => Self::MaximalCoherent,
            other => match other.strip_prefix("random_").or_else(|| other.strip_prefix("random:")) {
                Some(seed) => Self::Random(seed.parse().map_err(|_| {
                    QrcError::Validation(format!("bad seed in initial state {other:?}"))
                })?),
                None => {
                    return Err(QrcError::Validation(format!("unknown initial state {other:?}")))
                }
            },
        })
    }

    pub fn density_matrix(&self, n_spins: usize) -> Result<DensityMatrix> {
        let zero = [1.0, 0.0];
        let one = [0.0, 1.0];
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let plus = [r, r];
        let minus = [r, -r];
        let first = n_spins / 2;
        let sites: Vec<[f64; 2]> = match self {
            Self::AllUpZ => vec![zero; n_spins],
            Self::AllDownZ => vec![one; n_spins],
            Self::HalfHalfZ => (0..n_spins).map(|k| if k < first { zero } else { one }).collect(),
            Self::HalfHalfX => (0..n_spins).map(|k| if k < first { plus } else { minus }).collect(),
            Self::MaximalCoherent => vec![plus; n_spins],
            Self::Random(seed) => {
                return random_density_matrix(1 << n_spins, &mut seed::stream(*seed));
            }
        };
        DensityMatrix::from_pure(&product_amplitudes(&sites))
    }
}

/// Amplitudes of a product state; the first site is the most significant bit.
fn product_amplitudes(sites: &[[f64; 2]]) -> Vec<C64> {
    let mut amp = vec![1.0];
    for s in sites {
        amp = amp.iter().flat_map(|&a| [a * s[0], a * s[1]]).collect();
    }
    amp.into_iter().map(|a| C64::new(a, 0.0)).collect()
}

/// Energy and parity around each unitary step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConservedTrace {
    pub e_post_inject: Vec<f64>,
    pub e_post_evolve: Vec<f64>,
    pub parity_post_inject: Vec<f64>,
    pub parity_post_evolve: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub inputs: Vec<f64>,
    pub design: DesignMatrix,
    pub conserved: Option<ConservedTrace>,
    /// Largest `|Tr ρ − 1|` seen over all steps.
    pub max_trace_error: f64,
    pub final_state: DensityMatrix,
}

pub fn run_trajectory(
    config: &ReservoirConfig,
    inputs: &[f64],
    init: NamedInitialState,
    record_conserved: bool,
) -> Result<Trajectory> {
    config.validate()?;
    let dynamics = Arc::new(Dynamics::new(&config.realization, config.dt)?);
    let rho = init.density_matrix(dynamics.n_spins())?;
    run_trajectory_from(&dynamics, &config.observables, inputs, rho, record_conserved)
}

/// Drives `rho` with `inputs` under precomputed dynamics.
pub fn run_trajectory_from(
    dynamics: &Arc<Dynamics>,
    observables: &[ObservableDescriptor],
    inputs: &[f64],
    rho: DensityMatrix,
    record_conserved: bool,
) -> Result<Trajectory> {
    validate_observables(observables, dynamics.n_spins())?;
    if let Some(&s) = inputs.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        check_input(s)?;
    }
    let mut state = ReservoirState::new(dynamics.clone(), rho)?;
    let labels = observables.iter().map(|o| o.label()).collect();
    let mut design = DesignMatrix::new(labels);
    let mut conserved = record_conserved.then(ConservedTrace::default);
    let watch = [ObservableDescriptor::Energy, ObservableDescriptor::Parity];
    let mut max_trace_error = 0.0f64;
    for (k, &s) in inputs.iter().enumerate() {
        if let Some(trace) = conserved.as_mut() {
            state.inject(s)?;
            let pre = state.measure(&watch)?;
            state.evolve()?;
            let post = state.measure(&watch)?;
            trace.e_post_inject.push(pre[0]);
            trace.parity_post_inject.push(pre[1]);
            trace.e_post_evolve.push(post[0]);
            trace.parity_post_evolve.push(post[1]);
        } else {
            state.step(s)?;
        }
        max_trace_error = max_trace_error.max(state.rho().trace_error());
        let row = state
            .measure(observables)
            .map_err(|e| e.context(format!("step {k}")))?;
        design.push_row(&row)?;
    }
    Ok(Trajectory {
        inputs: inputs.to_vec(),
        design,
        conserved,
        max_trace_error,
        final_state: state.rho,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSeries {
    /// `d_k` for `k = 0..=L`.
    pub raw: Vec<f64>,
    /// `max(d_k, 1e-8)`.
    pub clamped: Vec<f64>,
}

impl ConvergenceSeries {
    pub fn final_raw(&self) -> f64 {
        *self.raw.last().expect("series always holds d_0")
    }
}

/// Frobenius distance between two random initial states driven by the same
/// inputs.
pub fn convergence_run(
    config: &ReservoirConfig,
    inputs: &[f64],
    seed_a: u64,
    seed_b: u64,
) -> Result<ConvergenceSeries> {
    if !(config.dt.is_finite() && config.dt > 0.0) {
        return Err(QrcError::Validation(format!("dt must be > 0, got {}", config.dt)));
    }
    let dynamics = Arc::new(Dynamics::new(&config.realization, config.dt)?);
    convergence_with(&dynamics, inputs, seed_a, seed_b)
}

pub fn convergence_with(
    dynamics: &Arc<Dynamics>,
    inputs: &[f64],
    seed_a: u64,
    seed_b: u64,
) -> Result<ConvergenceSeries> {
    let dim = dynamics.dim();
    let a = random_density_matrix(dim, &mut seed::stream(seed_a))?;
    let b = random_density_matrix(dim, &mut seed::stream(seed_b))?;
    convergence_from_states(dynamics, inputs, a, b)
}

pub fn convergence_from_states(
    dynamics: &Arc<Dynamics>,
    inputs: &[f64],
    a: DensityMatrix,
    b: DensityMatrix,
) -> Result<ConvergenceSeries> {
    let mut sa = ReservoirState::new(dynamics.clone(), a)?;
    let mut sb = ReservoirState::new(dynamics.clone(), b)?;
    let mut raw = Vec::with_capacity(inputs.len() + 1);
    raw.push(frobenius_distance(sa.rho().matrix(), sb.rho().matrix())?);
    for &s in inputs {
        sa.step(s)?;
        sb.step(s)?;
        raw.push(frobenius_distance(sa.rho().matrix(), sb.rho().matrix())?);
    }
    let clamped = raw.iter().map(|d| d.max(DISTANCE_FLOOR)).collect();
    Ok(ConvergenceSeries { raw, clamped })
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut header = vec!["step".to_string(), "s".to_string()];
    header.extend(traj.design.labels().iter().cloned());
    if traj.conserved.is_some() {
        header.extend(["e_post_inject", "e_post_evolve", "parity"].map(String::from));
    }
    let mut t = CsvTable::new(&header);
    for k in 0..traj.design.rows() {
        let mut cells = vec![Cell::from(k), Cell::from(traj.inputs[k])];
        cells.extend(traj.design.row(k).iter().map(|&x| Cell::from(x)));
        if let Some(c) = &traj.conserved {
            cells.push(Cell::from(c.e_post_inject[k]));
            cells.push(Cell::from(c.e_post_evolve[k]));
            cells.push(Cell::from(c.parity_post_evolve[k]));
        }
        t.push_row(&cells);
    }
    t.into_string()
}

pub fn convergence_csv(series: &ConvergenceSeries) -> String {
    let mut t = CsvTable::new(&["step", "distance_raw", "distance_clamped"]);
    for (k, (r, c)) in series.raw.iter().zip(&series.clamped).enumerate() {
        t.push_row(&[Cell::from(k), Cell::from(*r), Cell::from(*c)]);
    }
    t.into_string()
}
