//! Experiment configuration: a `key = value` text file plus overrides.
//!
//! ```text
//! # game13 | rsp(a,b) | zerosum17 | file:<path> | traffic:<path>
//! game = game13
//! # random environment file; implies process = APM
//! # environment = env.txt
//! beta = 0.4            # one value, or one per player separated by commas
//! process = AP,CMS      # AP | CMS | APM, comma separated
//! steps = 25000
//! seeds = 1-100         # ranges and comma lists
//! sampling = geometric:1.2   # geometric:<ratio> | linear:<every> | none
//! out = runs/fig1
//! theta0 = 1
//! w0 = 0                # initial environment state
//! fit_window = 100,25000
//! fit_threshold = 0.5
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use adaptive_play::simulate::{ProcessKind, Sampling};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const KEYS: [&str; 13] = [
    "game",
    "environment",
    "beta",
    "process",
    "steps",
    "seeds",
    "sampling",
    "out",
    "theta0",
    "w0",
    "fit_window",
    "fit_threshold",
    "lipschitz_samples",
];

#[derive(Debug, Clone, PartialEq)]
pub enum GameSource {
    Game13,
    Rsp(f64, f64),
    ZeroSum17,
    File(PathBuf),
    Traffic(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub game: Option<GameSource>,
    pub environment: Option<PathBuf>,
    pub beta: Vec<f64>,
    pub processes: Vec<ProcessKind>,
    pub steps: u64,
    pub seeds: Vec<u64>,
    pub sampling: Sampling,
    pub out: PathBuf,
    pub theta0: f64,
    pub w0: usize,
    /// Rate-fit stage window; `hi` is clamped to the horizon.
    pub fit_window: Option<(u64, u64)>,
    pub fit_threshold: f64,
    /// Random base points used when estimating the Lipschitz constant of the
    /// invariant measure.
    pub lipschitz_samples: usize,
    /// First 16 hex digits of the SHA-256 of the normalized settings and the
    /// contents of every referenced file.
    pub hash: String,
}

/// `(line, key, value)` triples of a config text.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, CliError> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Parse(format!("line {}: expected 'key = value'", k + 1)));
        };
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Parse(format!("line {}: unknown key '{key}'", k + 1)));
        }
        out.push((k + 1, key, value.trim().to_string()));
    }
    Ok(out)
}

fn config_err(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.trim()
        .parse()
        .map_err(|_| config_err(key, format!("'{v}' is not a valid number")))
}

pub fn parse_seeds(v: &str) -> Result<Vec<u64>, CliError> {
    let mut seeds = Vec::new();
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (parse_num("seeds", a)?, parse_num("seeds", b)?);
                if a > b {
                    return Err(config_err("seeds", format!("empty range {part}")));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(parse_num("seeds", part)?),
        }
    }
    if seeds.is_empty() {
        return Err(config_err("seeds", "at least one seed is required"));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(d) = seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(config_err("seeds", format!("seed {d} listed twice")));
    }
    Ok(seeds)
}

pub fn parse_sampling(v: &str) -> Result<Sampling, CliError> {
    let (kind, arg) = v.split_once(':').unwrap_or((v, ""));
    match kind.trim() {
        "geometric" => Ok(Sampling::Geometric {
            ratio: if arg.is_empty() { 1.2 } else { parse_num("sampling", arg)? },
        }),
        "linear" => Ok(Sampling::Linear {
            every: parse_num("sampling", arg)?,
        }),
        "none" => Ok(Sampling::None),
        _ => Err(config_err("sampling", format!("unknown schedule '{v}'"))),
    }
}

fn resolve(base: &Path, p: &str) -> Result<PathBuf, CliError> {
    let path = base.join(p.trim());
    if !path.is_file() {
        return Err(CliError::Config(format!("referenced file {} does not exist", path.display())));
    }
    Ok(path)
}

pub fn parse_game_source(v: &str, base: &Path) -> Result<GameSource, CliError> {
    let v = v.trim();
    if let Some(p) = v.strip_prefix("file:") {
        return Ok(GameSource::File(resolve(base, p)?));
    }
    if let Some(p) = v.strip_prefix("traffic:") {
        return Ok(GameSource::Traffic(resolve(base, p)?));
    }
    match v {
        "game13" => return Ok(GameSource::Game13),
        "zerosum17" => return Ok(GameSource::ZeroSum17),
        _ => {}
    }
    if let Some(args) = v.strip_prefix("rsp(").and_then(|r| r.strip_suffix(')')) {
        let parts: Vec<&str> = args.split(',').collect();
        if parts.len() == 2 {
            let (a, b): (f64, f64) = (parse_num("game", parts[0])?, parse_num("game", parts[1])?);
            if a > 0.0 && b > 0.0 {
                return Ok(GameSource::Rsp(a, b));
            }
        }
        return Err(config_err("game", "rsp(a,b) needs two positive numbers"));
    }
    Err(config_err(
        "game",
        format!("unknown game '{v}' (expected game13, rsp(a,b), zerosum17, file:<path> or traffic:<path>)"),
    ))
}

impl ExperimentConfig {
    /// Builds a config from a text (`None`: defaults only), with later
    /// `overrides` replacing earlier values.
    pub fn build(text: Option<&str>, base: &Path, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut pairs: Vec<(String, String)> = match text {
            Some(t) => parse_pairs(t)?.into_iter().map(|(_, k, v)| (k, v)).collect(),
            None => Vec::new(),
        };
        for (k, v) in overrides {
            if !KEYS.contains(&k.as_str()) {
                return Err(CliError::Usage(format!("unknown key '{k}'")));
            }
            pairs.push((k.clone(), v.clone()));
        }
        let get = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());

        let environment = get("environment").map(|p| resolve(base, p)).transpose()?;
        let game = get("game").map(|v| parse_game_source(v, base)).transpose()?;
        if game.is_none() && environment.is_none() {
            return Err(CliError::Config("either 'game' or 'environment' is required".into()));
        }
        if game.is_some() && environment.is_some() {
            return Err(CliError::Config("'game' and 'environment' are mutually exclusive".into()));
        }
        let beta = match get("beta") {
            Some(v) => v.split(',').map(|b| parse_num("beta", b)).collect::<Result<Vec<f64>, _>>()?,
            None => vec![1.0],
        };
        if beta.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(config_err("beta", "values must be finite and nonnegative"));
        }
        let processes = match get("process") {
            Some(v) => v
                .split(',')
                .map(|p| p.trim().parse::<ProcessKind>().map_err(|e| config_err("process", e)))
                .collect::<Result<Vec<_>, _>>()?,
            None if environment.is_some() => vec![ProcessKind::Apm],
            None => vec![ProcessKind::Ap],
        };
        if processes.is_empty() {
            return Err(config_err("process", "at least one process is required"));
        }
        if environment.is_some() && processes.iter().any(|p| *p != ProcessKind::Apm) {
            return Err(config_err("process", "an environment file runs only the APM process"));
        }
        let steps: u64 = get("steps").map(|v| parse_num("steps", v)).transpose()?.unwrap_or(10_000);
        if steps == 0 {
            return Err(config_err("steps", "must be positive"));
        }
        let seeds = parse_seeds(get("seeds").unwrap_or("1"))?;
        let sampling = get("sampling").map(parse_sampling).transpose()?.unwrap_or_default();
        sampling.stages(steps).map_err(|e| config_err("sampling", e))?;
        let out = base.join(get("out").unwrap_or("out"));
        let theta0: f64 = get("theta0").map(|v| parse_num("theta0", v)).transpose()?.unwrap_or(1.0);
        if !(theta0 > 0.0 && theta0 <= 1.0) {
            return Err(config_err("theta0", "must lie in (0, 1]"));
        }
        let w0 = get("w0").map(|v| parse_num("w0", v)).transpose()?.unwrap_or(0);
        let fit_window = match get("fit_window") {
            Some(v) => {
                let parts: Vec<&str> = v.split(',').collect();
                if parts.len() != 2 {
                    return Err(config_err("fit_window", "expected 'lo,hi'"));
                }
                let (lo, hi): (u64, u64) = (parse_num("fit_window", parts[0])?, parse_num("fit_window", parts[1])?);
                if lo == 0 || lo >= hi {
                    return Err(config_err("fit_window", "need 0 < lo < hi"));
                }
                Some((lo, hi))
            }
            None => None,
        };
        let fit_threshold = get("fit_threshold")
            .map(|v| parse_num("fit_threshold", v))
            .transpose()?
            .unwrap_or(0.5);
        let lipschitz_samples = get("lipschitz_samples")
            .map(|v| parse_num("lipschitz_samples", v))
            .transpose()?
            .unwrap_or(200);

        let mut cfg = Self {
            game,
            environment,
            beta,
            processes,
            steps,
            seeds,
            sampling,
            out,
            theta0,
            w0,
            fit_window,
            fit_threshold,
            lipschitz_samples,
            hash: String::new(),
        };
        cfg.hash = cfg.compute_hash()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::build(Some(&text), base, overrides)
    }

    /// Settings that determine the results; the output directory is left out.
    pub fn canonical(&self) -> String {
        let game = match &self.game {
            None => "none".to_string(),
            Some(GameSource::Game13) => "game13".into(),
            Some(GameSource::ZeroSum17) => "zerosum17".into(),
            Some(GameSource::Rsp(a, b)) => format!("rsp({a},{b})"),
            Some(GameSource::File(_)) => "file".into(),
            Some(GameSource::Traffic(_)) => "traffic".into(),
        };
        let join = |v: Vec<String>| v.join(",");
        format!(
            "game={game}\nenvironment={}\nbeta={}\nprocess={}\nsteps={}\nseeds={}\nsampling={:?}\ntheta0={}\nw0={}\nfit_window={:?}\nfit_threshold={}\nlipschitz_samples={}\n",
            self.environment.is_some(),
            join(self.beta.iter().map(f64::to_string).collect()),
            join(self.processes.iter().map(ProcessKind::to_string).collect()),
            self.steps,
            join(self.seeds.iter().map(u64::to_string).collect()),
            self.sampling,
            self.theta0,
            self.w0,
            self.fit_window,
            self.fit_threshold,
            self.lipschitz_samples,
        )
    }

    fn compute_hash(&self) -> Result<String, CliError> {
        let mut h = Sha256::new();
        h.update(self.canonical().as_bytes());
        let file = match &self.game {
            Some(GameSource::File(p)) | Some(GameSource::Traffic(p)) => Some(p),
            _ => self.environment.as_ref(),
        };
        if let Some(p) = file {
            let bytes = std::fs::read(p).map_err(|e| CliError::Io(format!("cannot read {}: {e}", p.display())))?;
            h.update(&bytes);
        }
        Ok(h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect())
    }
}
