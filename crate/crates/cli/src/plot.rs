//! Gnuplot scripts and the data they read, built from a simulation batch.
//!
//! * `fig1.gp` / `fig1_data.csv`: median squared error against the stage,
//!   one curve per process, log-log axes.
//! * `fig2.gp` / `fig2_data.csv`: the first player's choice probabilities
//!   along the first trajectory; for three strategies the path is drawn in
//!   the simplex.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use adaptive_play::io::{read_table, Table, SUMMARY_HEADER};

use crate::simulate::{median, SUMMARY_FILE};
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct PlotOutcome {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

struct Loaded {
    name: String,
    process: String,
    seed: u64,
    table: Table,
}

fn read(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    read_table(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

fn require(t: &Table, name: &str, col: &str) -> Result<usize, CliError> {
    t.column(col)
        .ok_or_else(|| CliError::Schema(format!("{name}: missing column '{col}'")))
}

fn number(t: &Table, name: &str, row: usize, col: usize) -> Result<f64, CliError> {
    t.rows[row][col]
        .parse()
        .map_err(|_| CliError::Schema(format!("{name}: row {} column '{}' is not a number", row + 1, t.header[col])))
}

fn write(path: PathBuf, text: &str, out: &mut PlotOutcome) -> Result<(), CliError> {
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    out.files.push(path);
    Ok(())
}

fn load_batch(dir: &Path) -> Result<Vec<Loaded>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Io(format!("cannot read {}: {e}", dir.display())))?;
    let mut batch = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Io(e.to_string()))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if !(name.starts_with("traj_") && name.ends_with(".csv")) {
            continue;
        }
        let table = read(&path)?;
        let seed = table
            .meta("seed")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::Schema(format!("{name}: missing seed metadata")))?;
        let process = table
            .meta("process")
            .ok_or_else(|| CliError::Schema(format!("{name}: missing process metadata")))?
            .to_string();
        require(&table, &name, "stage")?;
        batch.push(Loaded {
            name,
            process,
            seed,
            table,
        });
    }
    batch.sort_by(|a, b| (&a.process, a.seed).cmp(&(&b.process, b.seed)));
    Ok(batch)
}

fn header_lines(batch: &[Loaded]) -> String {
    let hash = batch[0].table.meta("config_hash").unwrap_or("unknown");
    let seeds: std::collections::BTreeSet<u64> = batch.iter().map(|l| l.seed).collect();
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    format!("# config_hash={hash}\n# seeds={}\n", seeds.join(" "))
}

fn figure1(dir: &Path, batch: &[Loaded], out: &mut PlotOutcome) -> Result<(), CliError> {
    // stage -> process -> errors across seeds
    let mut by_stage: BTreeMap<u64, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    let mut processes: Vec<&str> = Vec::new();
    for l in batch {
        let stage = require(&l.table, &l.name, "stage")?;
        let err = require(&l.table, &l.name, "sq_error")?;
        if !processes.contains(&l.process.as_str()) {
            processes.push(&l.process);
        }
        for r in 0..l.table.rows.len() {
            let n = number(&l.table, &l.name, r, stage)? as u64;
            let e = number(&l.table, &l.name, r, err)?;
            by_stage.entry(n).or_default().entry(&l.process).or_default().push(e);
        }
    }
    let mut data = header_lines(batch);
    data.push_str("stage");
    for p in &processes {
        let _ = write!(data, ",{p}");
    }
    data.push('\n');
    for (n, per) in &mut by_stage {
        let _ = write!(data, "{n}");
        for p in &processes {
            match per.get_mut(p).and_then(|v| median(v)) {
                Some(m) => {
                    let _ = write!(data, ",{m:e}");
                }
                None => data.push_str(",NaN"),
            }
        }
        data.push('\n');
    }
    write(dir.join("fig1_data.csv"), &data, out)?;

    let mut gp = String::from(
        "set datafile separator \",\"\nset key autotitle columnhead\nset logscale xy\nset format y \"10^{%L}\"\n\
         set xlabel \"n\"\nset ylabel \"median squared error\"\n\
         set terminal pngcairo size 800,600\nset output \"fig1.png\"\nplot ",
    );
    let curves: Vec<String> = (0..processes.len())
        .map(|k| format!("\"fig1_data.csv\" using 1:{} with lines lw 2", k + 2))
        .collect();
    gp.push_str(&curves.join(", \\\n     "));
    gp.push('\n');
    write(dir.join("fig1.gp"), &gp, out)
}

fn figure2(dir: &Path, batch: &[Loaded], out: &mut PlotOutcome) -> Result<(), CliError> {
    let l = &batch[0];
    let stage = require(&l.table, &l.name, "stage")?;
    let k = l.table.header.iter().filter(|h| h.starts_with("sigma_0_")).count();
    if k == 0 {
        return Err(CliError::Schema(format!("{}: missing column 'sigma_0_0'", l.name)));
    }
    let cols: Vec<usize> = (0..k)
        .map(|s| require(&l.table, &l.name, &format!("sigma_0_{s}")))
        .collect::<Result<_, _>>()?;
    let simplex = k == 3;
    let mut data = header_lines(std::slice::from_ref(l));
    data.push_str("stage");
    for s in 0..k {
        let _ = write!(data, ",sigma_0_{s}");
    }
    if simplex {
        data.push_str(",px,py");
    }
    data.push('\n');
    for r in 0..l.table.rows.len() {
        let _ = write!(data, "{}", number(&l.table, &l.name, r, stage)? as u64);
        let mut p = Vec::with_capacity(k);
        for &c in &cols {
            let v = number(&l.table, &l.name, r, c)?;
            p.push(v);
            let _ = write!(data, ",{v:e}");
        }
        if simplex {
            // Barycentric coordinates on the triangle (0,0), (1,0), (1/2, sqrt(3)/2).
            let _ = write!(data, ",{:e},{:e}", p[1] + 0.5 * p[2], p[2] * 3f64.sqrt() / 2.0);
        }
        data.push('\n');
    }
    write(dir.join("fig2_data.csv"), &data, out)?;

    let mut gp = String::from("set datafile separator \",\"\nset key autotitle columnhead\nset terminal pngcairo size 700,650\nset output \"fig2.png\"\n");
    if simplex {
        gp.push_str(
            "unset key\nunset border\nunset tics\nset size ratio -1\n\
             set object 1 polygon from 0,0 to 1,0 to 0.5,0.8660254 to 0,0 fillstyle empty border lc rgb \"black\"\n\
             set label 1 \"s1\" at -0.05,-0.03\nset label 2 \"s2\" at 1.02,-0.03\nset label 3 \"s3\" at 0.49,0.9\n\
             set xrange [-0.1:1.1]\nset yrange [-0.1:0.95]\n",
        );
        let _ = writeln!(gp, "plot \"fig2_data.csv\" using {}:{} with lines lw 1", k + 2, k + 3);
    } else {
        gp.push_str("set logscale x\nset xlabel \"n\"\nset ylabel \"sigma\"\nset yrange [0:1]\nplot ");
        let curves: Vec<String> = (0..k)
            .map(|s| format!("\"fig2_data.csv\" using 1:{} with lines", s + 2))
            .collect();
        gp.push_str(&curves.join(", \\\n     "));
        gp.push('\n');
    }
    write(dir.join("fig2.gp"), &gp, out)
}

pub fn plot(dir: &Path) -> Result<PlotOutcome, CliError> {
    let mut out = PlotOutcome::default();
    let summary = dir.join(SUMMARY_FILE);
    if summary.is_file() {
        let t = read(&summary)?;
        for col in SUMMARY_HEADER {
            require(&t, SUMMARY_FILE, col)?;
        }
    }
    let batch = load_batch(dir)?;
    if batch.is_empty() {
        out.warnings
            .push(format!("{}: no trajectory files, nothing to plot", dir.display()));
        return Ok(out);
    }
    figure1(dir, &batch, &mut out)?;
    figure2(dir, &batch, &mut out)?;
    Ok(out)
}
