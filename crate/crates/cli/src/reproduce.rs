//! `gsca reproduce <experiment>`: the simulation studies as tidy CSV tables.

use std::path::PathBuf;
use std::time::Instant;

use clap::ValueEnum;
use serde::Serialize;

use gsca::error::Result;
use gsca::experiments::{self, SweepConfig};
use gsca::io::{self, RunManifest};
use gsca::penalty::PenaltyFamily;
use gsca::simulation::SimParams;
use gsca::solver::DEFAULT_MAX_ITER;

use crate::{finish, parameters, prepare_out, ReproduceArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Experiment {
    /// Best fit per penalty plus the full-information baseline.
    Table2,
    /// Nuclear-norm path: RMSEs, sigma2 and rank against lambda.
    Fig3,
    /// Best RMSEs against the hyper-parameter of Lq, SCAD and GDP.
    Fig4,
    /// Leading singular values of truth, estimates and noise.
    Fig5,
    /// Best RMSEs against the signal-to-noise ratio.
    Fig7,
    /// Minimum RMSE(theta) and minimum CV error against the GDP gamma.
    Fig8,
    /// CV error, RMSE and rank along the GDP(1) lambda path.
    Fig9,
    /// Exact-rank fits at a loose and a tight tolerance from one start.
    #[value(name = "fig2-overfit")]
    #[serde(rename = "fig2-overfit")]
    Fig2Overfit,
}

impl Experiment {
    fn default_eps(self) -> f64 {
        match self {
            Experiment::Fig8 | Experiment::Fig9 => 1e-5,
            _ => 1e-8,
        }
    }

    fn default_max_iter(self) -> usize {
        match self {
            Experiment::Fig2Overfit => 100_000,
            _ => DEFAULT_MAX_ITER,
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            Experiment::Table2 => "table2",
            Experiment::Fig3 => "fig3",
            Experiment::Fig4 => "fig4",
            Experiment::Fig5 => "fig5",
            Experiment::Fig7 => "fig7",
            Experiment::Fig8 => "fig8",
            Experiment::Fig9 => "fig9",
            Experiment::Fig2Overfit => "fig2_overfit",
        }
    }
}

const SPECTRUM_LEN: usize = 15;
const OVERFIT_RANK: usize = 3;

pub fn run(a: &ReproduceArgs) -> Result<()> {
    let start = Instant::now();
    let manifest = RunManifest::new("reproduce", parameters(a), Some(a.seed));
    let exp = a.experiment;
    let eps_f = a.eps.unwrap_or(exp.default_eps());
    let max_iter = a.max_iter.unwrap_or(exp.default_max_iter());
    let sweep = SweepConfig {
        eps_f,
        max_iter,
        grid_len: a.grid_len,
        init_seed: a.init_seed,
        ..SweepConfig::default()
    };
    let params = SimParams::reference_scale(a.seed);
    let (truth, data, dropped) = experiments::prepared_simulation(&params)?;
    if dropped > 0 {
        log::warn!("dropped {dropped} binary columns without both outcomes");
    }
    let dir = &a.out.out;
    prepare_out(dir)?;
    let table = dir.join(format!("{}.csv", exp.file_stem()));
    let mut outputs: Vec<PathBuf> = vec![table.clone()];
    match exp {
        Experiment::Table2 => {
            let cmp = experiments::compare_penalties(&truth, &data, &experiments::standard_families(), &sweep)?;
            io::write_table(&table, &cmp.rows)?;
        }
        Experiment::Fig3 => {
            let path = experiments::rmse_path(&truth, &data, PenaltyFamily::Nuclear, &sweep)?;
            io::write_table(&table, &path.points)?;
        }
        Experiment::Fig4 => {
            let mut rows = Vec::new();
            for kind in ["lq", "scad", "gdp"] {
                let grid = experiments::default_hyper_grid(kind);
                rows.extend(experiments::hyper_sweep(&truth, &data, kind, &grid, &sweep)?);
            }
            io::write_table(&table, &rows)?;
        }
        Experiment::Fig5 => {
            let cmp = experiments::compare_penalties(&truth, &data, &experiments::standard_families(), &sweep)?;
            io::write_table(&table, &experiments::spectra(&truth, &cmp, SPECTRUM_LEN)?)?;
            let p = dir.join("table2.csv");
            io::write_table(&p, &cmp.rows)?;
            outputs.push(p);
        }
        Experiment::Fig7 => {
            let snrs = experiments::snr_grid(0.1, 100.0, a.snr_count)?;
            let families = [
                PenaltyFamily::Nuclear,
                PenaltyFamily::Lq { q: 0.1 },
                PenaltyFamily::Gdp { gamma: 1.0 },
            ];
            io::write_table(&table, &experiments::snr_sweep(&params, &snrs, &families, &sweep)?)?;
        }
        Experiment::Fig8 => {
            let mut config = experiments::cv_path_config(1.0, eps_f, gsca::model_selection::DEFAULT_FOLDS, a.grid_len, a.init_seed)?;
            config.fit.max_iter = max_iter;
            let gammas = experiments::default_hyper_grid("gdp");
            io::write_table(&table, &experiments::gamma_cv_sweep(&truth, &data, &gammas, &config)?)?;
        }
        Experiment::Fig9 => {
            let mut config = experiments::cv_path_config(1.0, eps_f, gsca::model_selection::DEFAULT_FOLDS, a.grid_len, a.init_seed)?;
            config.fit.max_iter = max_iter;
            let study = experiments::cv_study(&truth, &data, &config)?;
            io::write_table(&table, &study.rows)?;
            let p = dir.join("cv.json");
            io::write_json(&p, &study.result)?;
            outputs.push(p);
        }
        Experiment::Fig2Overfit => {
            let study = experiments::overfit_study(&data, OVERFIT_RANK, &[1e-5, 1e-8], a.init_seed, max_iter)?;
            io::write_table(&table, &study.rows)?;
            for (row, fit) in study.rows.iter().zip(&study.fits) {
                let p = dir.join(format!("B1_eps{:e}.csv", row.eps_f));
                io::write_dense(&p, "comp", fit.b1.view())?;
                outputs.push(p);
            }
        }
    }
    println!("wrote {}", table.display());
    finish(manifest, dir, &outputs, start)
}
