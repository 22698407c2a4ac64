//! Text formats for games, networks and environments, and CSV output.
//!
//! All input formats are line based. `#` starts a comment, blank lines are
//! ignored and tokens are separated by whitespace.
//!
//! Game file:
//!
//! ```text
//! players 2
//! strategies 2 2
//! # one line per pure profile, last player's strategy varying fastest,
//! # holding one payoff per player
//! 0 0
//! -1 1
//! 1 -1
//! 0 0
//! ```
//!
//! Network file (one nondecreasing cost line per route, cost of load 1..N):
//!
//! ```text
//! routes 2
//! players 3
//! 1 2 3
//! 2 2 2
//! ```
//!
//! Environment file: a header, one payoff block per state (same profile
//! lines as a game file), then the chain.
//!
//! ```text
//! states 2
//! players 2
//! strategies 2 2
//! payoffs 0
//! ...profile lines...
//! payoffs 1
//! ...profile lines...
//! chain constant
//! row 0.7 0.3
//! row 0.4 0.6
//! ```
//!
//! An affine chain `P = (1 - t) P0 + t P1`, `t = lambda^{player, strategy}`,
//! is written `chain affine <player> <strategy>` followed by `p0` rows and
//! then `p1` rows.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::game::Game;
use crate::markov::{AffineChain, ChainFamily, ConstantChain, MarkovEnvironment};
use crate::dynamics::JointState;
use crate::simulate::{sample_error, Trajectory};
use crate::traffic::TrafficNetwork;

/// Version tag written in the header of every CSV file.
pub const CSV_VERSION: u32 = 1;

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        message: message.into(),
    })
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, Vec<&'a str>)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, Vec<&'a str>)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").split_whitespace().collect::<Vec<_>>()))
                .filter(|(_, t)| !t.is_empty()),
        );
        Self {
            inner: it.peekable(),
            last: 0,
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        match self.inner.next() {
            Some((line, tokens)) => {
                self.last = line;
                Ok((line, tokens))
            }
            None => parse_err(self.last + 1, format!("unexpected end of input, expected {what}")),
        }
    }

    fn peek_keyword(&mut self) -> Option<&'a str> {
        self.inner.peek().map(|(_, t)| t[0])
    }

    fn finish(&mut self) -> Result<()> {
        match self.inner.next() {
            Some((line, _)) => parse_err(line, "unexpected trailing content"),
            None => Ok(()),
        }
    }

    /// `keyword v1 v2 ...` with `count` integer values (`None`: any number).
    fn keyword_ints(&mut self, keyword: &str, count: Option<usize>) -> Result<(usize, Vec<usize>)> {
        let (line, tokens) = self.next(keyword)?;
        if tokens[0] != keyword {
            return parse_err(line, format!("expected '{keyword}', found '{}'", tokens[0]));
        }
        let values = tokens[1..]
            .iter()
            .map(|t| t.parse::<usize>().or_else(|_| parse_err(line, format!("'{t}' is not a nonnegative integer"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(c) = count {
            if values.len() != c {
                return parse_err(line, format!("'{keyword}' takes {c} value(s), found {}", values.len()));
            }
        }
        Ok((line, values))
    }
}

fn parse_reals(line: usize, tokens: &[&str]) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => parse_err(line, format!("'{t}' is not a finite number")),
        })
        .collect()
}

fn read_header(lines: &mut Lines) -> Result<Vec<usize>> {
    let (line, players) = lines.keyword_ints("players", Some(1))?;
    let n = players[0];
    if n == 0 {
        return parse_err(line, "a game needs at least one player");
    }
    let (line, counts) = lines.keyword_ints("strategies", Some(n))?;
    if counts.contains(&0) {
        return parse_err(line, "every player needs at least one strategy");
    }
    Ok(counts)
}

fn read_payoffs(lines: &mut Lines, counts: &[usize]) -> Result<Game> {
    let n = counts.len();
    let profiles: usize = counts.iter().product();
    let mut payoffs = vec![Vec::with_capacity(profiles); n];
    for k in 0..profiles {
        let (line, tokens) = lines.next(&format!("payoff line for profile {k}"))?;
        if tokens.len() != n {
            return parse_err(line, format!("expected {n} payoffs, found {}", tokens.len()));
        }
        for (i, v) in parse_reals(line, &tokens)?.into_iter().enumerate() {
            payoffs[i].push(v);
        }
    }
    let line = lines.last;
    Game::new(counts.to_vec(), payoffs).or_else(|e| parse_err(line, e.to_string()))
}

pub fn parse_game(text: &str) -> Result<Game> {
    let mut lines = Lines::new(text);
    let counts = read_header(&mut lines)?;
    let game = read_payoffs(&mut lines, &counts)?;
    lines.finish()?;
    Ok(game)
}

pub fn parse_network(text: &str) -> Result<TrafficNetwork> {
    let mut lines = Lines::new(text);
    let (line, routes) = lines.keyword_ints("routes", Some(1))?;
    if routes[0] == 0 {
        return parse_err(line, "a network needs at least one route");
    }
    let (line, players) = lines.keyword_ints("players", Some(1))?;
    if players[0] == 0 {
        return parse_err(line, "a network needs at least one player");
    }
    let mut costs = Vec::new();
    for r in 0..routes[0] {
        let (line, tokens) = lines.next(&format!("cost line for route {r}"))?;
        if tokens.len() != players[0] {
            return parse_err(line, format!("expected {} costs, found {}", players[0], tokens.len()));
        }
        let c = parse_reals(line, &tokens)?;
        if c.windows(2).any(|w| w[1] < w[0]) {
            return parse_err(line, format!("costs of route {r} must be nondecreasing"));
        }
        costs.push(c);
    }
    lines.finish()?;
    TrafficNetwork::new(costs).or_else(|e| parse_err(line, e.to_string()))
}

fn read_matrix_rows(lines: &mut Lines, keyword: &str, size: usize) -> Result<DMatrix<f64>> {
    let mut data = Vec::with_capacity(size * size);
    for r in 0..size {
        let (line, tokens) = lines.next(&format!("'{keyword}' row {r}"))?;
        if tokens[0] != keyword {
            return parse_err(line, format!("expected '{keyword}', found '{}'", tokens[0]));
        }
        if tokens.len() != size + 1 {
            return parse_err(line, format!("expected {size} transition probabilities"));
        }
        data.extend(parse_reals(line, &tokens[1..])?);
    }
    Ok(DMatrix::from_row_slice(size, size, &data))
}

pub fn parse_environment(text: &str) -> Result<MarkovEnvironment> {
    let mut lines = Lines::new(text);
    let (line, states) = lines.keyword_ints("states", Some(1))?;
    let w = states[0];
    if w == 0 {
        return parse_err(line, "an environment needs at least one state");
    }
    let counts = read_header(&mut lines)?;
    let mut games = Vec::with_capacity(w);
    for k in 0..w {
        let (line, idx) = lines.keyword_ints("payoffs", Some(1))?;
        if idx[0] != k {
            return parse_err(line, format!("expected payoffs for state {k}, found {}", idx[0]));
        }
        games.push(read_payoffs(&mut lines, &counts)?);
    }
    let (line, tokens) = lines.next("chain")?;
    if tokens[0] != "chain" || tokens.len() < 2 {
        return parse_err(line, "expected 'chain constant' or 'chain affine <player> <strategy>'");
    }
    let chain: Arc<dyn ChainFamily> = match tokens[1] {
        "constant" => {
            if tokens.len() != 2 {
                return parse_err(line, "'chain constant' takes no arguments");
            }
            let p = read_matrix_rows(&mut lines, "row", w)?;
            Arc::new(ConstantChain::new(p).or_else(|e| parse_err(line, e.to_string()))?)
        }
        "affine" => {
            if tokens.len() != 4 {
                return parse_err(line, "'chain affine' takes a player and a strategy");
            }
            let ints = tokens[2..]
                .iter()
                .map(|t| t.parse::<usize>().or_else(|_| parse_err(line, format!("'{t}' is not an index"))))
                .collect::<Result<Vec<_>>>()?;
            let p0 = read_matrix_rows(&mut lines, "p0", w)?;
            let p1 = read_matrix_rows(&mut lines, "p1", w)?;
            Arc::new(AffineChain::new(p0, p1, ints[0], ints[1]).or_else(|e| parse_err(line, e.to_string()))?)
        }
        other => return parse_err(line, format!("unknown chain family '{other}'")),
    };
    if let Some(k) = lines.peek_keyword() {
        let (line, _) = lines.next(k)?;
        return parse_err(line, "unexpected trailing content");
    }
    MarkovEnvironment::new(games, chain).or_else(|e| parse_err(line, e.to_string()))
}

fn read_file(path: &Path) -> Result<String> {
    let mut s = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
    Ok(s)
}

pub fn load_game(path: &Path) -> Result<Game> {
    parse_game(&read_file(path)?)
}

pub fn load_network(path: &Path) -> Result<TrafficNetwork> {
    parse_network(&read_file(path)?)
}

pub fn load_environment(path: &Path) -> Result<MarkovEnvironment> {
    parse_environment(&read_file(path)?)
}

/// Writes a game in the format read by [`parse_game`].
pub fn format_game(game: &Game) -> String {
    let mut out = format!("players {}\nstrategies", game.num_players());
    for k in game.strategy_counts() {
        out.push_str(&format!(" {k}"));
    }
    out.push('\n');
    for (k, _) in game.profiles().enumerate() {
        let row: Vec<String> = (0..game.num_players())
            .map(|i| format!("{}", game.payoff_table(i)[k]))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Metadata written as `# key=value` lines above every CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvMeta {
    pub kind: &'static str,
    pub config_hash: String,
    pub seed: Option<u64>,
}

fn write_meta(out: &mut dyn Write, meta: &CsvMeta) -> std::io::Result<()> {
    writeln!(out, "# format={}/{}", meta.kind, CSV_VERSION)?;
    writeln!(out, "# config_hash={}", meta.config_hash)?;
    if let Some(seed) = meta.seed {
        writeln!(out, "# seed={seed}")?;
    }
    Ok(())
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Io(format!("csv output failed: {e}"))
}

/// Column names of a trajectory table for the given strategy counts.
pub fn trajectory_header(counts: &[usize], with_env: bool, with_error: bool) -> Vec<String> {
    let mut h = vec!["stage".to_string()];
    for prefix in ["x", "lambda", "sigma"] {
        for (i, &k) in counts.iter().enumerate() {
            for s in 0..k {
                h.push(format!("{prefix}_{i}_{s}"));
            }
        }
    }
    for i in 0..counts.len() {
        h.push(format!("action_{i}"));
    }
    for i in 0..counts.len() {
        h.push(format!("payoff_{i}"));
    }
    if with_env {
        h.push("env".into());
    }
    if with_error {
        h.push("sq_error".into());
    }
    h
}

/// One row per recorded stage: stage, perceptions, frequencies, choice
/// probabilities, actions, payoffs, (random environment) the state and, when
/// a reference rest point is given, the squared rate-fit error.
pub fn write_trajectory_csv(
    out: &mut dyn Write,
    traj: &Trajectory,
    rest: Option<&JointState>,
    meta: &CsvMeta,
) -> Result<()> {
    write_meta(out, meta).map_err(csv_err)?;
    writeln!(out, "# process={}", traj.process).map_err(csv_err)?;
    let counts: Vec<usize> = traj.terminal.x.iter().map(Vec::len).collect();
    let with_env = traj.samples.iter().any(|s| s.env.is_some());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(&counts, with_env, rest.is_some()))
        .map_err(csv_err)?;
    for s in &traj.samples {
        let mut rec = vec![s.stage.to_string()];
        for block in [&s.x, &s.lambda, &s.sigma] {
            rec.extend(block.iter().flatten().map(|v| format!("{v:e}")));
        }
        rec.extend(s.actions.iter().map(|a| a.to_string()));
        rec.extend(s.payoffs.iter().map(|v| format!("{v}")));
        if with_env {
            rec.push(s.env.map(|e| e.to_string()).unwrap_or_default());
        }
        if let Some(rest) = rest {
            rec.push(format!("{:e}", sample_error(traj.process, s, rest).powi(2)));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)?;
    Ok(())
}

/// Per-seed summary of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub seed: u64,
    pub process: String,
    pub steps: u64,
    /// Distance to the reference rest point at the horizon (same norm as the
    /// rate fit).
    pub terminal_error: f64,
    pub sup_error: f64,
    pub delta_hat: Option<f64>,
    pub r2: Option<f64>,
    pub converged: bool,
    pub tail_min_distance: f64,
    pub tail_max_distance: f64,
}

pub const SUMMARY_HEADER: [&str; 11] = [
    "seed",
    "process",
    "steps",
    "terminal_error",
    "terminal_sq_error",
    "sup_error",
    "delta_hat",
    "r2",
    "converged",
    "tail_min_distance",
    "tail_max_distance",
];

pub fn write_summary_csv(out: &mut dyn Write, rows: &[SummaryRow], meta: &CsvMeta) -> Result<()> {
    write_meta(out, meta).map_err(csv_err)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.process.clone(),
            r.steps.to_string(),
            format!("{:e}", r.terminal_error),
            format!("{:e}", r.terminal_error * r.terminal_error),
            format!("{:e}", r.sup_error),
            opt(r.delta_hat),
            opt(r.r2),
            r.converged.to_string(),
            format!("{:e}", r.tail_min_distance),
            format!("{:e}", r.tail_max_distance),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)?;
    Ok(())
}

/// A CSV table read back: metadata, header and string records.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn read_table(text: &str) -> Result<Table> {
    let meta = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l[1..].trim().split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| Error::Parse {
            line: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(Table { meta, header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::cyclic_3x3;
    use crate::rules::LogitRule;
    use crate::simulate::{run, ProcessKind, RunConfig, Sampling};

    #[test]
    fn game_roundtrip() {
        let game = cyclic_3x3();
        let text = format_game(&game);
        assert_eq!(parse_game(&text).unwrap(), game);
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = "# matching pennies\nplayers 2\n\nstrategies 2 2  # two each\n0 0\n-1 1\n1 -1\n0 0\n";
        let g = parse_game(text).unwrap();
        assert_eq!(g.payoff(0, &[0, 1]), -1.0);
        assert_eq!(g.payoff(1, &[1, 0]), -1.0);
    }

    fn line_of(e: Error) -> usize {
        match e {
            Error::Parse { line, .. } => line,
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn game_errors_carry_line_numbers() {
        assert_eq!(line_of(parse_game("players 2\nstrategies 2\n").unwrap_err()), 2);
        assert_eq!(line_of(parse_game("players 1\nstrategies 2\n1\nx\n").unwrap_err()), 4);
        assert_eq!(line_of(parse_game("players 1\nstrategies 2\n1\n2 3\n").unwrap_err()), 4);
        assert_eq!(line_of(parse_game("players 1\nstrategies 2\n1\n").unwrap_err()), 4);
        assert_eq!(line_of(parse_game("players 1\nstrategies 1\n1\n5\n").unwrap_err()), 4);
        assert_eq!(line_of(parse_game("player 1\n").unwrap_err()), 1);
        assert_eq!(line_of(parse_game("players 1\nstrategies 1\ninf\n").unwrap_err()), 3);
    }

    #[test]
    fn network_parsing() {
        let net = parse_network("routes 2\nplayers 3\n1 2 3\n2 2 2\n").unwrap();
        assert_eq!(net.num_routes(), 2);
        assert_eq!(net.cost(0, 3), 3.0);
        assert_eq!(line_of(parse_network("routes 2\nplayers 3\n1 2 3\n2 1 2\n").unwrap_err()), 4);
        assert_eq!(line_of(parse_network("routes 1\nplayers 2\n1\n").unwrap_err()), 3);
    }

    const ENV: &str = "states 2
players 1
strategies 2
payoffs 0
1
0
payoffs 1
0
1
chain constant
row 0.5 0.5
row 0.25 0.75
";

    #[test]
    fn environment_parsing() {
        let env = parse_environment(ENV).unwrap();
        assert_eq!(env.num_states(), 2);
        assert!(env.chain().is_constant());
        let affine = "states 2\nplayers 1\nstrategies 2\npayoffs 0\n1\n0\npayoffs 1\n0\n1\nchain affine 0 1\np0 1 0\np0 0 1\np1 0 1\np1 1 0\n";
        let env = parse_environment(affine).unwrap();
        assert!(!env.chain().is_constant());
        let bad = ENV.replace("row 0.25 0.75", "row 0.25 0.7");
        assert_eq!(line_of(parse_environment(&bad).unwrap_err()), 10);
        let bad = ENV.replace("payoffs 1", "payoffs 2");
        assert_eq!(line_of(parse_environment(&bad).unwrap_err()), 7);
    }

    #[test]
    fn trajectory_csv_roundtrip() {
        let game = cyclic_3x3();
        let rule = LogitRule::uniform(2, 0.4).unwrap();
        let mut cfg = RunConfig::new(100, 3);
        cfg.sampling = Sampling::Linear { every: 10 };
        let traj = run(ProcessKind::Ap, &game, &rule, &cfg).unwrap();
        let meta = CsvMeta {
            kind: "trajectory",
            config_hash: "abc".into(),
            seed: Some(3),
        };
        let mut buf = Vec::new();
        let rest = JointState::on_response(&rule, vec![vec![0.0; 3]; 2]);
        write_trajectory_csv(&mut buf, &traj, Some(&rest), &meta).unwrap();
        let table = read_table(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(table.meta("seed"), Some("3"));
        assert_eq!(table.meta("format"), Some("trajectory/1"));
        assert_eq!(table.rows.len(), 10);
        let c = table.column("x_1_2").unwrap();
        let v: f64 = table.rows[9][c].parse().unwrap();
        assert_eq!(v, traj.terminal.x[1][2]);
        assert!(table.column("env").is_none());
        let e: f64 = table.rows[9][table.column("sq_error").unwrap()].parse().unwrap();
        assert!((e - sample_error(traj.process, traj.last(), &rest).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn summary_csv_header() {
        let mut buf = Vec::new();
        let row = SummaryRow {
            seed: 1,
            process: "AP".into(),
            steps: 10,
            terminal_error: 0.5,
            sup_error: 0.4,
            delta_hat: None,
            r2: Some(0.9),
            converged: true,
            tail_min_distance: 0.1,
            tail_max_distance: 0.2,
        };
        let meta = CsvMeta {
            kind: "summary",
            config_hash: "h".into(),
            seed: None,
        };
        write_summary_csv(&mut buf, &[row], &meta).unwrap();
        let table = read_table(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(table.header, SUMMARY_HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        assert_eq!(table.rows[0][table.column("terminal_sq_error").unwrap()], "2.5e-1");
        assert_eq!(table.rows[0][table.column("delta_hat").unwrap()], "");
    }
}
