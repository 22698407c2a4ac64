use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use adaptive_play::dynamics::JointState;
use adaptive_play::io::{write_summary_csv, write_trajectory_csv, CsvMeta, SummaryRow};
use adaptive_play::linalg::sup_distance;
use adaptive_play::markov::run_apm_batch;
use adaptive_play::simulate::{
    cycle_detector, rate_fit, run_batch, sample_error, CycleOptions, ProcessKind, RunConfig, Trajectory,
};
use adaptive_play::markov::MarkovEnvironment;

use crate::config::ExperimentConfig;
use crate::model::{reference_rest_point, Model};
use crate::CliError;

pub const SUMMARY_FILE: &str = "summary.csv";

pub fn trajectory_file(process: ProcessKind, seed: u64) -> String {
    format!("traj_{process}_seed{seed}.csv")
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub rest: JointState,
    pub rows: Vec<SummaryRow>,
    pub trajectories: Vec<PathBuf>,
    /// Written only for batches of more than one seed.
    pub summary: Option<PathBuf>,
    pub warnings: Vec<String>,
}

/// Rate-fit window clamped to the horizon; by default from `steps / 250`
/// to the horizon. `None` when the window is empty.
pub fn fit_window(cfg: &ExperimentConfig) -> Option<(u64, u64)> {
    let (lo, hi) = cfg.fit_window.unwrap_or(((cfg.steps / 250).max(1), cfg.steps));
    let hi = hi.min(cfg.steps);
    (lo < hi).then_some((lo, hi))
}

pub fn summarize(
    traj: &Trajectory,
    rest: &JointState,
    cfg: &ExperimentConfig,
    warnings: &mut Vec<String>,
) -> SummaryRow {
    let fit = fit_window(cfg).and_then(|w| rate_fit(traj, rest, w, cfg.fit_threshold).ok());
    let (converged, tail_min, tail_max) = match cycle_detector(traj, &rest.x, CycleOptions::default()) {
        Ok(c) => (c.converged, c.tail_min_distance, c.tail_max_distance),
        Err(e) => {
            warnings.push(format!("seed {}: no tail diagnostics ({e})", traj.seed));
            (false, f64::NAN, f64::NAN)
        }
    };
    SummaryRow {
        seed: traj.seed,
        process: traj.process.to_string(),
        steps: traj.terminal.n,
        terminal_error: sample_error(traj.process, traj.last(), rest),
        sup_error: sup_distance(&traj.terminal.x, &rest.x),
        delta_hat: fit.as_ref().filter(|f| !f.degenerate).map(|f| f.delta_hat),
        r2: fit.as_ref().filter(|f| !f.degenerate).map(|f| f.r2),
        converged,
        tail_min_distance: tail_min,
        tail_max_distance: tail_max,
    }
}

fn create(path: &PathBuf) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))
}

pub fn run_process(
    model: &Model,
    kind: ProcessKind,
    cfg: &ExperimentConfig,
) -> Result<Vec<Trajectory>, CliError> {
    let rule = model.rule(cfg)?;
    let mut run = RunConfig::new(cfg.steps, 0);
    run.sampling = cfg.sampling.clone();
    run.theta0 = cfg.theta0;
    Ok(match (model, kind) {
        (Model::Environment(env), _) => run_apm_batch(env, &rule, &run, cfg.w0, &cfg.seeds)?,
        (_, ProcessKind::Apm) => {
            let env = MarkovEnvironment::deterministic(model.game().clone());
            run_apm_batch(&env, &rule, &run, 0, &cfg.seeds)?
        }
        _ => run_batch(kind, model.game(), &rule, &run, &cfg.seeds)?,
    })
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulateOutcome, CliError> {
    let model = Model::load(cfg)?;
    let rule = model.rule(cfg)?;
    let rest = reference_rest_point(&model, &rule)?;
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cfg.out.display())))?;
    let mut rows = Vec::new();
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    for &kind in &cfg.processes {
        let batch = run_process(&model, kind, cfg)?;
        // Per-seed files are written serially after the parallel batch.
        for traj in &batch {
            let path = cfg.out.join(trajectory_file(kind, traj.seed));
            let meta = CsvMeta {
                kind: "trajectory",
                config_hash: cfg.hash.clone(),
                seed: Some(traj.seed),
            };
            let mut w = create(&path)?;
            write_trajectory_csv(&mut w, traj, Some(&rest), &meta)?;
            files.push(path);
            rows.push(summarize(traj, &rest, cfg, &mut warnings));
        }
    }
    let summary = if cfg.seeds.len() > 1 {
        let path = cfg.out.join(SUMMARY_FILE);
        let meta = CsvMeta {
            kind: "summary",
            config_hash: cfg.hash.clone(),
            seed: None,
        };
        write_summary_csv(&mut create(&path)?, &rows, &meta)?;
        Some(path)
    } else {
        None
    };
    Ok(SimulateOutcome {
        rest,
        rows,
        trajectories: files,
        summary,
        warnings,
    })
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 0 {
        0.5 * (values[m - 1] + values[m])
    } else {
        values[m]
    })
}

impl SimulateOutcome {
    pub fn report(&self, cfg: &ExperimentConfig) -> String {
        let mut s = format!("config_hash {}\n", cfg.hash);
        for kind in &cfg.processes {
            let rows: Vec<&SummaryRow> = self.rows.iter().filter(|r| r.process == kind.to_string()).collect();
            let mut sq: Vec<f64> = rows.iter().map(|r| r.terminal_error.powi(2)).collect();
            let mut dh: Vec<f64> = rows.iter().filter_map(|r| r.delta_hat).collect();
            let conv = rows.iter().filter(|r| r.converged).count();
            s.push_str(&format!(
                "{kind}: {} seed(s), median terminal squared error {:.4e}, median delta_hat {}, converged {conv}/{}\n",
                rows.len(),
                median(&mut sq).unwrap_or(f64::NAN),
                median(&mut dh).map_or("n/a".to_string(), |v| format!("{v:.3}")),
                rows.len(),
            ));
        }
        for f in &self.trajectories {
            s.push_str(&format!("wrote {}\n", f.display()));
        }
        if let Some(p) = &self.summary {
            s.push_str(&format!("wrote {}\n", p.display()));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&mut []), None);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
