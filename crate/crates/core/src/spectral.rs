//! Adjacent-gap ratio statistics and phase-diagram scans.
//!
//! `r_n = min(δ_n, δ_{n+1}) / max(δ_n, δ_{n+1})` with `δ_n = E_n − E_{n−1}`.
//! Poissonian (localized) spectra give `⟨r⟩ ≈ 0.386`; Wigner-Dyson
//! (ergodic) spectra give `⟨r⟩ ≈ 0.53`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QrcError, Result};
use crate::linalg::hermitian_eigenvalues;
use crate::output::{Cell, CsvTable};
use crate::seed::{derive_seed, tag};
use crate::spin_model::{build_sector_hamiltonian, sample_realization, ModelParams, Sector};

/// `⟨r⟩` for independent (Poisson) levels, `2 ln 2 − 1`.
pub const POISSON_MEAN_R: f64 = 0.386_294_361_119_890_6;
/// `⟨r⟩` for the Gaussian orthogonal ensemble.
pub const GOE_MEAN_R: f64 = 0.5307;

/// Gap pairs whose larger gap is below this fraction of the spectral span are
/// treated as degenerate and skipped.
pub const DEGENERATE_GAP_REL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRatioStats {
    pub ratios: Vec<f64>,
    pub mean_r: f64,
    pub n_dropped: usize,
}

pub fn gap_ratio_stats(eigenvalues: &[f64]) -> Result<GapRatioStats> {
    if eigenvalues.len() < 3 {
        return Err(QrcError::Validation(format!(
            "need at least 3 eigenvalues, got {}",
            eigenvalues.len()
        )));
    }
    if let Some(k) = eigenvalues.windows(2).position(|w| !(w[0] <= w[1])) {
        return Err(QrcError::Validation(format!(
            "eigenvalues not sorted ascending at index {}",
            k + 1
        )));
    }
    let span = eigenvalues[eigenvalues.len() - 1] - eigenvalues[0];
    let floor = DEGENERATE_GAP_REL * span;
    let mut ratios = Vec::with_capacity(eigenvalues.len() - 2);
    let mut n_dropped = 0;
    for w in eigenvalues.windows(3) {
        let d1 = w[1] - w[0];
        let d2 = w[2] - w[1];
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        if hi < floor || hi == 0.0 {
            n_dropped += 1;
        } else {
            ratios.push(lo / hi);
        }
    }
    if ratios.is_empty() {
        return Err(QrcError::Numeric(
            "spectrum is fully degenerate; no gap ratio is defined".into(),
        ));
    }
    let mean_r = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(GapRatioStats {
        ratios,
        mean_r,
        n_dropped,
    })
}

/// `n` points log-spaced over `[lo, hi]`, both ends included.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64))
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub h: f64,
    pub w: f64,
    pub mean_r: f64,
    pub stderr_r: f64,
    pub n_realizations: usize,
    pub n_dropped_total: usize,
}

/// Mean and standard error of the mean (zero for a single sample).
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `⟨r⟩` of one disorder realization in the given sector.
pub fn realization_mean_r(params: &ModelParams, sector: Sector) -> Result<GapRatioStats> {
    let real = sample_realization(params)?;
    let h = build_sector_hamiltonian(&real, sector)?;
    let ev = hermitian_eigenvalues(&h)?;
    gap_ratio_stats(&ev)
}

/// Seed of realization `r` of grid cell `(ih, iw)`.
pub fn phase_seed(master_seed: u64, ih: usize, iw: usize, r: usize) -> u64 {
    derive_seed(master_seed, &[tag::PHASE, ih as u64, iw as u64, r as u64])
}

/// Averages `⟨r⟩` over realizations of one `(h, w)` cell. Realizations run on
/// the current rayon pool; the result does not depend on its size.
#[allow(clippy::too_many_arguments)]
pub fn phase_cell(
    h: f64,
    w: f64,
    ih: usize,
    iw: usize,
    n_realizations: usize,
    template: &ModelParams,
    master_seed: u64,
    sector: Sector,
) -> Result<PhaseCell> {
    if n_realizations == 0 {
        return Err(QrcError::Validation("need at least one realization".into()));
    }
    let stats: Vec<Result<GapRatioStats>> = (0..n_realizations)
        .into_par_iter()
        .map(|r| {
            let params = ModelParams {
                h,
                w,
                seed: phase_seed(master_seed, ih, iw, r),
                ..*template
            };
            realization_mean_r(&params, sector)
                .map_err(|e| e.context(format!("h={h}, w={w}, realization {r}")))
        })
        .collect();
    let stats: Vec<GapRatioStats> = stats.into_iter().collect::<Result<_>>()?;
    let means: Vec<f64> = stats.iter().map(|s| s.mean_r).collect();
    let (mean_r, stderr_r) = mean_and_stderr(&means);
    Ok(PhaseCell {
        h,
        w,
        mean_r,
        stderr_r,
        n_realizations,
        n_dropped_total: stats.iter().map(|s| s.n_dropped).sum(),
    })
}

/// Heat map of `⟨r⟩` over an `h × w` grid, in row order `(h, w)` with `w`
/// varying fastest.
pub fn phase_scan(
    h_grid: &[f64],
    w_grid: &[f64],
    n_realizations: usize,
    template: &ModelParams,
    master_seed: u64,
    sector: Sector,
) -> Result<Vec<PhaseCell>> {
    if h_grid.is_empty() || w_grid.is_empty() {
        return Err(QrcError::Validation("field and disorder grids must be non-empty".into()));
    }
    template.validate()?;
    let mut cells = Vec::with_capacity(h_grid.len() * w_grid.len());
    for (ih, &h) in h_grid.iter().enumerate() {
        for (iw, &w) in w_grid.iter().enumerate() {
            cells.push(phase_cell(h, w, ih, iw, n_realizations, template, master_seed, sector)?);
        }
    }
    Ok(cells)
}

pub const PHASE_CSV_HEADER: [&str; 6] =
    ["h", "w", "mean_r", "stderr_r", "n_realizations", "n_dropped_total"];

pub fn phase_cells_csv(cells: &[PhaseCell]) -> String {
    let mut t = CsvTable::new(&PHASE_CSV_HEADER);
    for c in cells {
        t.push_row(&[
            Cell::from(c.h),
            Cell::from(c.w),
            Cell::from(c.mean_r),
            Cell::from(c.stderr_r),
            Cell::from(c.n_realizations),
            Cell::from(c.n_dropped_total),
        ]);
    }
    t.into_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_pair() {
        let s = gap_ratio_stats(&[0.0, 1.0, 3.0]).unwrap();
        assert_eq!(s.ratios, vec![0.5]);
        assert_eq!(s.mean_r, 0.5);
        assert_eq!(s.n_dropped, 0);
    }

    #[test]
    fn rejects_short_or_unsorted() {
        assert!(gap_ratio_stats(&[0.0, 1.0]).is_err());
        assert!(matches!(
            gap_ratio_stats(&[0.0, 2.0, 1.0]),
            Err(QrcError::Validation(_))
        ));
    }

    #[test]
    fn degenerate_pairs_are_dropped_and_counted() {
        // Gaps: 1, 0, 0, 1 → pairs (1,0) kept as 0, (0,0) dropped, (0,1) kept as 0.
        let s = gap_ratio_stats(&[0.0, 1.0, 1.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.n_dropped, 1);
        assert_eq!(s.ratios, vec![0.0, 0.0]);
        assert!(gap_ratio_stats(&[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn exact_scaling_by_powers_of_two() {
        let e = [-1.3, -0.2, 0.05, 0.9, 2.75];
        let scaled: Vec<f64> = e.iter().map(|x| 8.0 * x).collect();
        assert_eq!(gap_ratio_stats(&e).unwrap(), gap_ratio_stats(&scaled).unwrap());
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-2, 1e2, 5);
        assert_eq!(g.len(), 5);
        assert!((g[0] - 0.01).abs() < 1e-15);
        assert!((g[2] - 1.0).abs() < 1e-12);
        assert!((g[4] - 100.0).abs() < 1e-10);
    }

    #[test]
    fn phase_cell_is_deterministic_across_pool_sizes() {
        let template = ModelParams {
            n_spins: 6,
            ..Default::default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| phase_cell(1.0, 0.5, 0, 0, 3, &template, 5, Sector::Even).unwrap())
        };
        assert_eq!(run(1), run(4));
        let csv = phase_cells_csv(&[run(1)]);
        assert!(csv.starts_with("h,w,mean_r,stderr_r,n_realizations,n_dropped_total\n"));
    }

    proptest! {
        #[test]
        fn invariants_of_gap_ratios(
            mut levels in prop::collection::vec(-50.0f64..50.0, 3..60),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            prop_assume!(levels.len() >= 3);
            let base = gap_ratio_stats(&levels);
            prop_assume!(base.is_ok());
            let base = base.unwrap();
            prop_assert!((0.0..=1.0).contains(&base.mean_r));
            prop_assert!(base.ratios.iter().all(|r| (0.0..=1.0).contains(r)));

            let affine: Vec<f64> = levels.iter().map(|x| a * x + b).collect();
            if let Ok(s) = gap_ratio_stats(&affine) {
                prop_assert_eq!(s.ratios.len(), base.ratios.len());
                for (x, y) in s.ratios.iter().zip(&base.ratios) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }

            let mut mirrored: Vec<f64> = levels.iter().rev().map(|x| -x).collect();
            mirrored.sort_by(f64::total_cmp);
            let m = gap_ratio_stats(&mirrored).unwrap();
            let mut r1 = m.ratios.clone();
            let mut r2 = base.ratios.clone();
            r1.sort_by(f64::total_cmp);
            r2.sort_by(f64::total_cmp);
            for (x, y) in r1.iter().zip(&r2) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
