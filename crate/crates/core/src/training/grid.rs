use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{encode_pgm, DatasetSplit};
use crate::error::{Error, Result};
use crate::tensor::SeededRng;

use super::trainer::{train_two_phase, Teachers, TrainConfig, TrainReport};

/// One `(λ0, E_attn)` cell of the search.
#[derive(Clone, Debug)]
pub struct GridCell {
    pub lambda0: f64,
    pub e_attn: usize,
    pub seed: u64,
    /// `Err` holds the failure message; a failed cell scores `-inf`.
    pub outcome: std::result::Result<TrainReport, String>,
}

impl GridCell {
    pub fn best_optim_value(&self) -> f64 {
        self.outcome.as_ref().map_or(f64::NEG_INFINITY, |r| r.best_optim_value)
    }
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub lambdas: Vec<f64>,
    pub e_attns: Vec<usize>,
    /// Row-major: `cells[i * e_attns.len() + j]` is `(lambdas[i], e_attns[j])`.
    pub cells: Vec<GridCell>,
    /// Index into `cells` of the selected configuration.
    pub best: usize,
}

impl GridResult {
    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }

    /// `λ0` rows by `E_attn` columns of best Optim Value.
    pub fn heatmap(&self) -> Vec<Vec<f64>> {
        self.cells
            .chunks(self.e_attns.len())
            .map(|row| row.iter().map(GridCell::best_optim_value).collect())
            .collect()
    }

    pub fn heatmap_csv(&self) -> String {
        let mut out = String::from("lambda0");
        for e in &self.e_attns {
            write!(out, ",E{e}").unwrap();
        }
        out.push('\n');
        for (lam, row) in self.lambdas.iter().zip(self.heatmap()) {
            write!(out, "{lam}").unwrap();
            for v in row {
                write!(out, ",{v:e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Gray-scale heatmap, one pixel per cell, brighter is better.
    /// Failed cells are black; a constant grid is all white.
    pub fn heatmap_pgm(&self) -> Vec<u8> {
        let vals: Vec<f64> = self.heatmap().concat();
        let finite = vals.iter().copied().filter(|v| v.is_finite());
        let lo = finite.clone().fold(f64::INFINITY, f64::min);
        let hi = finite.fold(f64::NEG_INFINITY, f64::max);
        let gray: Vec<u8> = vals
            .iter()
            .map(|&v| {
                if !v.is_finite() {
                    0
                } else if hi > lo {
                    ((v - lo) / (hi - lo) * 255.0).round() as u8
                } else {
                    255
                }
            })
            .collect();
        encode_pgm(self.e_attns.len(), self.lambdas.len(), &gray)
    }

    pub fn write_heatmaps(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("grid_heatmap.csv");
        fs::write(&csv, self.heatmap_csv()).map_err(|e| Error::io(&csv, e))?;
        let pgm = dir.join("grid_heatmap.pgm");
        fs::write(&pgm, self.heatmap_pgm()).map_err(|e| Error::io(&pgm, e))
    }
}

/// Index of the maximal score; ties go to the earliest index, which with
/// row-major cells means the smaller `λ0`, then the smaller `E_attn`.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if !(s > scores[b]) => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Seed of grid cell `(i, j)` derived from the template seed.
pub fn cell_seed(base: u64, i: usize, j: usize) -> u64 {
    SeededRng::derive_seed(base, ((i as u64) << 32) | j as u64)
}

/// Trains every `(λ0, E_attn)` combination on `split` and picks the one with
/// the highest best-epoch Optim Value. A failing cell is logged and scored
/// `-inf` without stopping the search. `jobs` > 1 trains cells concurrently.
pub fn run_grid(
    lambdas: &[f64],
    e_attns: &[usize],
    template: &TrainConfig,
    split: &DatasetSplit,
    teachers: &Teachers,
    jobs: usize,
) -> Result<GridResult> {
    if lambdas.is_empty() || e_attns.is_empty() {
        return Err(Error::Config("grid axes must be nonempty".into()));
    }
    let specs: Vec<(f64, usize, u64)> = lambdas
        .iter()
        .enumerate()
        .flat_map(|(i, &l)| e_attns.iter().enumerate().map(move |(j, &e)| (l, e, cell_seed(template.seed, i, j))))
        .collect();
    let run = |&(lambda0, e_attn, seed): &(f64, usize, u64)| -> GridCell {
        let cfg = TrainConfig {
            lambda0,
            e_attn,
            seed,
            ..template.clone()
        };
        let outcome = train_two_phase(&cfg, split, teachers).map(|r| r.report).map_err(|e| {
            log::warn!("grid cell λ0={lambda0} E_attn={e_attn} failed: {e}");
            e.to_string()
        });
        GridCell {
            lambda0,
            e_attn,
            seed,
            outcome,
        }
    };
    let cells: Vec<GridCell> = if jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| specs.par_iter().map(run).collect())
    } else {
        specs.iter().map(run).collect()
    };
    let scores: Vec<f64> = cells.iter().map(GridCell::best_optim_value).collect();
    let best = select_best(&scores).expect("nonempty grid");
    if !scores[best].is_finite() {
        return Err(Error::Numerical("every grid cell failed".into()));
    }
    Ok(GridResult {
        lambdas: lambdas.to_vec(),
        e_attns: e_attns.to_vec(),
        cells,
        best,
    })
}
