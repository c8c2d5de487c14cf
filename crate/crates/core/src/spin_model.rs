//! Disordered transverse-field Ising networks with all-to-all random
//! couplings.
//!
//! ```text
//! H = Σ_{i>j} J_ij σ^x_i σ^x_j + ½ Σ_i (h + D_i) σ^z_i
//! ```
//!
//! Site 1 occupies the most significant bit of a basis index and `|0⟩` is the
//! `σ^z = +1` state, so site `s` of `N` maps to bit `N − s`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QrcError, Result};
use crate::linalg::{kron, ComplexMatrix, C64};
use crate::seed;

pub const MIN_SPINS: usize = 2;
pub const MAX_SPINS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_spins: usize,
    /// Uniform transverse field, in units of `j_s`.
    pub h: f64,
    /// Half-width of the onsite disorder distribution, in units of `j_s`.
    pub w: f64,
    /// Coupling scale; couplings are drawn from `[−j_s/2, j_s/2]`.
    pub j_s: f64,
    pub seed: u64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            n_spins: 10,
            h: 1.0,
            w: 0.0,
            j_s: 1.0,
            seed: 0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_SPINS..=MAX_SPINS).contains(&self.n_spins) {
            return Err(QrcError::Validation(format!(
                "n_spins must be in [{MIN_SPINS}, {MAX_SPINS}], got {}",
                self.n_spins
            )));
        }
        if !self.h.is_finite() {
            return Err(QrcError::Validation(format!("field h must be finite, got {}", self.h)));
        }
        if !(self.w.is_finite() && self.w >= 0.0) {
            return Err(QrcError::Validation(format!("disorder w must be >= 0, got {}", self.w)));
        }
        if !(self.j_s.is_finite() && self.j_s > 0.0) {
            return Err(QrcError::Validation(format!("j_s must be > 0, got {}", self.j_s)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        1 << self.n_spins
    }
}

/// One sampled set of couplings and onsite fields.
#[derive(Clone, Debug, PartialEq)]
pub struct DisorderRealization {
    pub params: ModelParams,
    /// Dense symmetric `n × n`, row-major, zero diagonal. Indices are 0-based.
    couplings: Vec<f64>,
    fields: Vec<f64>,
}

impl DisorderRealization {
    /// Builds a realization from explicit values; `couplings` is the full
    /// symmetric matrix in row-major order.
    pub fn from_parts(params: ModelParams, couplings: Vec<f64>, fields: Vec<f64>) -> Result<Self> {
        params.validate()?;
        let n = params.n_spins;
        if couplings.len() != n * n || fields.len() != n {
            return Err(QrcError::Shape(format!(
                "expected {} couplings and {n} fields, got {} and {}",
                n * n,
                couplings.len(),
                fields.len()
            )));
        }
        for i in 0..n {
            if couplings[i * n + i] != 0.0 {
                return Err(QrcError::Validation(format!("coupling J_{0}{0} must be zero", i + 1)));
            }
            for j in 0..i {
                if couplings[i * n + j] != couplings[j * n + i] {
                    return Err(QrcError::Validation(format!(
                        "couplings are not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        if couplings.iter().chain(&fields).any(|x| !x.is_finite()) {
            return Err(QrcError::Validation("non-finite coupling or field".into()));
        }
        Ok(Self {
            params,
            couplings,
            fields,
        })
    }

    pub fn n_spins(&self) -> usize {
        self.params.n_spins
    }

    /// `J_ij` with 1-based sites.
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        let n = self.n_spins();
        self.couplings[(i - 1) * n + (j - 1)]
    }

    /// `D_i` with a 1-based site.
    pub fn field(&self, i: usize) -> f64 {
        self.fields[i - 1]
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    /// Row-major lower triangle `J_21, J_31, J_32, …`.
    pub fn lower_triangle(&self) -> Vec<f64> {
        let n = self.n_spins();
        (0..n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| self.couplings[i * n + j])
            .collect()
    }

    pub fn to_record(&self) -> RealizationRecord {
        RealizationRecord {
            n_spins: self.params.n_spins,
            h: self.params.h,
            w: self.params.w,
            j_s: self.params.j_s,
            seed: self.params.seed,
            couplings: self.lower_triangle(),
            fields: self.fields.clone(),
        }
    }

    pub fn from_record(rec: &RealizationRecord) -> Result<Self> {
        let params = ModelParams {
            n_spins: rec.n_spins,
            h: rec.h,
            w: rec.w,
            j_s: rec.j_s,
            seed: rec.seed,
        };
        params.validate()?;
        let n = rec.n_spins;
        if rec.couplings.len() != n * (n - 1) / 2 {
            return Err(QrcError::Shape(format!(
                "expected {} lower-triangle couplings, got {}",
                n * (n - 1) / 2,
                rec.couplings.len()
            )));
        }
        let mut full = vec![0.0; n * n];
        let mut it = rec.couplings.iter();
        for i in 0..n {
            for j in 0..i {
                let v = *it.next().expect("length checked above");
                full[i * n + j] = v;
                full[j * n + i] = v;
            }
        }
        Self::from_parts(params, full, rec.fields.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_record())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_record(&serde_json::from_str(text)?)
    }
}

/// Serialized form of a realization, kept with experiment outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub n_spins: usize,
    pub h: f64,
    pub w: f64,
    #[serde(default = "unit_scale")]
    pub j_s: f64,
    pub seed: u64,
    pub couplings: Vec<f64>,
    pub fields: Vec<f64>,
}

fn unit_scale() -> f64 {
    1.0
}

/// Draws `J_ij ~ U[−j_s/2, j_s/2]` for `i > j` (row-major over the lower
/// triangle), then `D_i ~ U[−w, w]`, from the stream seeded by `params.seed`.
pub fn sample_realization(params: &ModelParams) -> Result<DisorderRealization> {
    params.validate()?;
    let mut rng = seed::stream(params.seed);
    let n = params.n_spins;
    let half = params.j_s / 2.0;
    let mut couplings = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = rng.random_range(-half..=half);
            couplings[i * n + j] = v;
            couplings[j * n + i] = v;
        }
    }
    let fields = (0..n)
        .map(|_| {
            if params.w == 0.0 {
                0.0
            } else {
                rng.random_range(-params.w..=params.w)
            }
        })
        .collect();
    Ok(DisorderRealization {
        params: *params,
        couplings,
        fields,
    })
}

#[inline]
fn site_mask(n_spins: usize, site: usize) -> usize {
    1 << (n_spins - site)
}

/// `Σ_i ½(h + D_i)(±1)` for a basis state.
fn diagonal_energy(real: &DisorderRealization, state: usize) -> f64 {
    let n = real.n_spins();
    let h = real.params.h;
    (1..=n)
        .map(|s| {
            let z = if state & site_mask(n, s) == 0 { 1.0 } else { -1.0 };
            0.5 * (h + real.field(s)) * z
        })
        .sum()
}

/// Assembles `H` on the given ascending list of basis states. `position` maps
/// a full-space index to its row in the restricted basis.
fn assemble(real: &DisorderRealization, basis: &[usize], position: &[usize]) -> ComplexMatrix {
    let n = real.n_spins();
    let dim = basis.len();
    let mut h = ComplexMatrix::zeros(dim, dim);
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 2..=n {
        for j in 1..i {
            let jij = real.coupling(i, j);
            if jij != 0.0 {
                pairs.push((site_mask(n, i) | site_mask(n, j), jij));
            }
        }
    }
    for (row, &state) in basis.iter().enumerate() {
        h.set(row, row, C64::new(diagonal_energy(real, state), 0.0));
        for &(mask, jij) in &pairs {
            let col = position[state ^ mask];
            debug_assert!(col != usize::MAX, "σxσx left the basis");
            let prev = h.get(row, col);
            h.set(row, col, prev + C64::new(jij, 0.0));
        }
    }
    h
}

/// Full `2^N × 2^N` Hamiltonian in the computational basis.
pub fn build_hamiltonian(real: &DisorderRealization) -> Result<ComplexMatrix> {
    let n = real.n_spins();
    if n > MAX_SPINS {
        return Err(QrcError::Size(format!("{n} spins exceeds the cap of {MAX_SPINS}")));
    }
    let dim = 1usize << n;
    let basis: Vec<usize> = (0..dim).collect();
    Ok(assemble(real, &basis, &basis))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sector {
    Even,
    Odd,
}

impl Sector {
    pub fn contains(self, state: usize) -> bool {
        let odd = state.count_ones() % 2 == 1;
        match self {
            Sector::Even => !odd,
            Sector::Odd => odd,
        }
    }
}

/// Basis states of a parity sector in ascending order.
pub fn sector_basis(n_spins: usize, sector: Sector) -> Vec<usize> {
    (0..1usize << n_spins).filter(|&s| sector.contains(s)).collect()
}

/// `H` restricted to one eigenspace of `P = Π σ^z_i`; dimension `2^{N−1}`.
pub fn build_sector_hamiltonian(real: &DisorderRealization, sector: Sector) -> Result<ComplexMatrix> {
    let n = real.n_spins();
    if n > MAX_SPINS {
        return Err(QrcError::Size(format!("{n} spins exceeds the cap of {MAX_SPINS}")));
    }
    let basis = sector_basis(n, sector);
    let mut position = vec![usize::MAX; 1 << n];
    for (row, &s) in basis.iter().enumerate() {
        position[s] = row;
    }
    Ok(assemble(real, &basis, &position))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// A measured quantity of the output layer. Sites are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservableDescriptor {
    Single { site: usize, axis: Axis },
    PairZz { i: usize, j: usize },
    Energy,
    Parity,
}

impl ObservableDescriptor {
    pub fn single(site: usize, axis: Axis) -> Self {
        ObservableDescriptor::Single { site, axis }
    }

    /// `σ^z_i σ^z_j`, stored with `i < j`.
    pub fn pair_zz(i: usize, j: usize) -> Result<Self> {
        if i == j {
            return Err(QrcError::Validation(format!("pair sites must differ, got {i} twice")));
        }
        Ok(ObservableDescriptor::PairZz {
            i: i.min(j),
            j: i.max(j),
        })
    }

    pub fn validate(&self, n_spins: usize) -> Result<()> {
        let in_range = |s: usize| (1..=n_spins).contains(&s);
        match *self {
            ObservableDescriptor::Single { site, .. } if !in_range(site) => Err(
                QrcError::Validation(format!("site {site} outside [1, {n_spins}]")),
            ),
            ObservableDescriptor::PairZz { i, j } if !(in_range(i) && in_range(j) && i < j) => {
                Err(QrcError::Validation(format!(
                    "pair ({i}, {j}) must satisfy 1 <= i < j <= {n_spins}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            ObservableDescriptor::Single { site, axis } => {
                let a = match axis {
                    Axis::X => 'x',
                    Axis::Y => 'y',
                    Axis::Z => 'z',
                };
                format!("{a}{site}")
            }
            ObservableDescriptor::PairZz { i, j } => format!("zz{i}_{j}"),
            ObservableDescriptor::Energy => "energy".to_string(),
            ObservableDescriptor::Parity => "parity".to_string(),
        }
    }

    /// `Tr[O ρ]` evaluated from the sparsity pattern of `O` rather than a
    /// dense operator. `rho` must be Hermitian for the energy kind.
    pub fn expectation(
        &self,
        rho: &ComplexMatrix,
        n_spins: usize,
        hamiltonian: Option<&ComplexMatrix>,
    ) -> Result<C64> {
        let dim = rho.rows();
        if dim != 1 << n_spins || !rho.is_square() {
            return Err(QrcError::Shape(format!(
                "state of dimension {dim} does not match {n_spins} spins"
            )));
        }
        self.validate(n_spins)?;
        let z = |state: usize, site: usize| -> f64 {
            if state & site_mask(n_spins, site) == 0 {
                1.0
            } else {
                -1.0
            }
        };
        let value = match *self {
            ObservableDescriptor::Single { site, axis: Axis::Z } => {
                let v: f64 = (0..dim).map(|a| z(a, site) * rho.get(a, a).re).sum();
                C64::new(v, 0.0)
            }
            ObservableDescriptor::PairZz { i, j } => {
                let v: f64 = (0..dim).map(|a| z(a, i) * z(a, j) * rho.get(a, a).re).sum();
                C64::new(v, 0.0)
            }
            ObservableDescriptor::Parity => {
                let v: f64 = (0..dim)
                    .map(|a| {
                        let sign = if a.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                        sign * rho.get(a, a).re
                    })
                    .sum();
                C64::new(v, 0.0)
            }
            ObservableDescriptor::Single { site, axis: Axis::X } => {
                let m = site_mask(n_spins, site);
                (0..dim).map(|a| rho.get(a ^ m, a)).sum()
            }
            ObservableDescriptor::Single { site, axis: Axis::Y } => {
                let m = site_mask(n_spins, site);
                (0..dim)
                    .map(|a| {
                        let o = if a & m == 0 {
                            C64::new(0.0, -1.0)
                        } else {
                            C64::new(0.0, 1.0)
                        };
                        o * rho.get(a ^ m, a)
                    })
                    .sum()
            }
            ObservableDescriptor::Energy => {
                let h = hamiltonian.ok_or_else(|| {
                    QrcError::Validation("energy observable needs the Hamiltonian".into())
                })?;
                if h.rows() != dim || h.cols() != dim {
                    return Err(QrcError::Shape("Hamiltonian does not match state".into()));
                }
                // Tr[Hρ] = Σ_ab H_ab ρ_ba = Σ_ab H_ab conj(ρ_ab) for Hermitian ρ.
                let mut acc = C64::new(0.0, 0.0);
                for b in 0..dim {
                    for (hab, rab) in h.column(b).iter().zip(rho.column(b)) {
                        acc += hab * rab.conj();
                    }
                }
                acc
            }
        };
        Ok(value)
    }
}

/// The `3N + N(N−1)/2` observables used as output layer: `σ^x_j` for every
/// site, then `σ^y_j`, then `σ^z_j`, then `σ^z_i σ^z_j` for `i < j` in
/// lexicographic order. For ten spins this is 75 observables.
pub fn default_observables(n_spins: usize) -> Vec<ObservableDescriptor> {
    let mut out = Vec::with_capacity(3 * n_spins + n_spins * (n_spins - 1) / 2);
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        out.extend((1..=n_spins).map(|s| ObservableDescriptor::single(s, axis)));
    }
    for i in 1..=n_spins {
        for j in (i + 1)..=n_spins {
            out.push(ObservableDescriptor::PairZz { i, j });
        }
    }
    out
}

/// `σ^z_j` for every site.
pub fn z_observables(n_spins: usize) -> Vec<ObservableDescriptor> {
    (1..=n_spins)
        .map(|s| ObservableDescriptor::single(s, Axis::Z))
        .collect()
}

fn pauli(axis: Axis) -> ComplexMatrix {
    let o = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    let entries = match axis {
        Axis::X => vec![o, one, one, o],
        Axis::Y => vec![o, -i, i, o],
        Axis::Z => vec![one, o, o, -one],
    };
    ComplexMatrix::from_row_major(2, 2, entries).expect("2x2 Pauli")
}

/// Tensor product with `factors[site]` on listed sites and identity elsewhere.
fn place(n_spins: usize, factors: &[(usize, Axis)]) -> Result<ComplexMatrix> {
    let mut acc = ComplexMatrix::identity(1);
    for site in 1..=n_spins {
        let f = factors
            .iter()
            .find(|(s, _)| *s == site)
            .map(|&(_, a)| pauli(a))
            .unwrap_or_else(|| ComplexMatrix::identity(2));
        acc = kron(&acc, &f)?;
    }
    Ok(acc)
}

/// Dense operator for a descriptor, built by Kronecker placement of Pauli
/// factors. The energy kind returns `h_matrix` itself.
pub fn observable_operator(
    desc: &ObservableDescriptor,
    n_spins: usize,
    h_matrix: Option<&ComplexMatrix>,
) -> Result<ComplexMatrix> {
    desc.validate(n_spins)?;
    match *desc {
        ObservableDescriptor::Single { site, axis } => place(n_spins, &[(site, axis)]),
        ObservableDescriptor::PairZz { i, j } => place(n_spins, &[(i, Axis::Z), (j, Axis::Z)]),
        ObservableDescriptor::Parity => {
            let all: Vec<(usize, Axis)> = (1..=n_spins).map(|s| (s, Axis::Z)).collect();
            place(n_spins, &all)
        }
        ObservableDescriptor::Energy => h_matrix.cloned().ok_or_else(|| {
            QrcError::Validation("energy observable needs the Hamiltonian".into())
        }),
    }
}
