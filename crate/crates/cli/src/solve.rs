use std::fmt;

use adaptive_play::dynamics::{jacobian_phi, jacobian_psi, numeric_jacobian, JacobianMode, JointState, SpectralReport};
use adaptive_play::linalg::{eigenvalues, max_real_part};
use adaptive_play::markov::{condition_report, psi_bar, ConditionReport, LipschitzEstimate};
use adaptive_play::traffic::{traffic_residual, traffic_stability_certificate, TrafficCertificate};
use adaptive_play::LogitRule;
use num_complex::Complex64;

use crate::check::{lipschitz, Regime};
use crate::config::ExperimentConfig;
use crate::model::{env_rest_point, game_rest_points, Model};
use crate::CliError;

#[derive(Debug, Clone)]
pub struct RestPointReport {
    pub x: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub residual: f64,
    pub method: String,
    /// Spectrum of the Jacobian of the mean field at the rest point.
    pub eigenvalues: Vec<Complex64>,
    pub rho: f64,
    /// Full report for deterministic games (analytic Jacobian).
    pub psi: Option<SpectralReport>,
    pub phi: Option<SpectralReport>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub hash: String,
    pub eta: f64,
    pub alpha: f64,
    pub two_eta_alpha: f64,
    pub regime: Regime,
    pub rest_points: Vec<RestPointReport>,
    pub traffic: Option<TrafficCertificate>,
    pub tau: Option<Vec<f64>>,
    pub condition: Option<ConditionReport>,
    pub lipschitz: Option<LipschitzEstimate>,
}

fn game_report(model: &Model, rule: &LogitRule, state: JointState, residual: f64, method: String) -> Result<RestPointReport, CliError> {
    let game = model.game();
    let psi = jacobian_psi(game, rule, &state, JacobianMode::Analytic)?;
    let phi = jacobian_phi(game, rule, &state.x, JacobianMode::Analytic)?;
    Ok(RestPointReport {
        sigma: state.lambda,
        x: state.x,
        residual,
        method,
        eigenvalues: psi.eigenvalues.clone(),
        rho: psi.rho,
        psi: Some(psi),
        phi: Some(phi),
    })
}

pub fn solve(cfg: &ExperimentConfig) -> Result<SolveReport, CliError> {
    let model = Model::load(cfg)?;
    let rule = model.rule(cfg)?;
    let alpha = rule.alpha();
    let mut report = SolveReport {
        hash: cfg.hash.clone(),
        eta: 0.0,
        alpha,
        two_eta_alpha: 0.0,
        regime: Regime::Open,
        rest_points: Vec::new(),
        traffic: None,
        tau: None,
        condition: None,
        lipschitz: None,
    };
    match &model {
        Model::Game(game) => {
            report.eta = game.eta();
            for p in game_rest_points(game, &rule)? {
                let method = format!("{:?}", p.method);
                report.rest_points.push(game_report(&model, &rule, p.state(), p.residual, method)?);
            }
        }
        Model::Traffic { net, .. } => {
            report.eta = net.eta();
            let rest = adaptive_play::traffic::symmetric_rest_point(net, rule.beta(0), 1e-12)?;
            let residual = traffic_residual(net, &rule, &rest.x)?;
            report.traffic = Some(traffic_stability_certificate(net, rule.beta(0), &rest)?);
            report
                .rest_points
                .push(game_report(&model, &rule, rest, residual, "symmetric".into())?);
        }
        Model::Environment(env) => {
            report.eta = env.eta_bar();
            let rest = env_rest_point(env, &rule)?;
            let counts = env.strategy_counts().to_vec();
            let f = |y: &[f64]| -> Vec<f64> {
                let s = JointState::from_flat(y, &counts);
                match psi_bar(env, &rule, &s) {
                    Ok(v) => JointState { x: v.x, lambda: v.lambda }.to_flat(),
                    Err(_) => vec![f64::NAN; y.len()],
                }
            };
            let jac = numeric_jacobian(&f, &rest.state.to_flat());
            if jac.iter().any(|v| !v.is_finite()) {
                return Err(CliError::Numerical(
                    "invariant measure is not unique near the rest point".into(),
                ));
            }
            let eig = eigenvalues(&jac);
            let est = lipschitz(env, cfg)?;
            report.condition = Some(condition_report(env, &rule, est.as_ref().map_or(0.0, |e| e.k))?);
            report.lipschitz = est;
            report.tau = Some(rest.tau.clone());
            report.rest_points.push(RestPointReport {
                rho: max_real_part(&eig),
                eigenvalues: eig,
                x: rest.state.x,
                sigma: rest.state.lambda,
                residual: rest.residual,
                method: format!("{:?}", rest.method),
                psi: None,
                phi: None,
            });
        }
    }
    report.two_eta_alpha = 2.0 * report.eta * alpha;
    report.regime = Regime::of(report.two_eta_alpha);
    Ok(report)
}

pub(crate) fn vec_fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.12}")).collect();
    format!("[{}]", parts.join(", "))
}

impl fmt::Display for SolveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "config_hash {}", self.hash)?;
        writeln!(f, "eta {:.6}  alpha {:.6}  2*eta*alpha {:.6}  ({})", self.eta, self.alpha, self.two_eta_alpha, self.regime)?;
        for (k, p) in self.rest_points.iter().enumerate() {
            writeln!(f, "rest point {k} (method {}, residual {:.3e})", p.method, p.residual)?;
            for (i, (x, s)) in p.x.iter().zip(&p.sigma).enumerate() {
                writeln!(f, "  player {i}: x {}  sigma {}", vec_fmt(x), vec_fmt(s))?;
            }
            writeln!(f, "  rho(grad Psi) {:.6}  {}", p.rho, if p.rho < 0.0 { "stable" } else { "unstable" })?;
            let eig: Vec<String> = p.eigenvalues.iter().map(|z| format!("{:.6}{:+.6}i", z.re, z.im)).collect();
            writeln!(f, "  eigenvalues {}", eig.join(" "))?;
            if let Some(psi) = &p.psi {
                let radius = psi.gershgorin_radii.iter().copied().fold(0.0, f64::max);
                writeln!(f, "  trace {:.6}  max Gershgorin radius {:.6}", psi.trace, radius)?;
            }
            if let Some(phi) = &p.phi {
                writeln!(f, "  rho(grad Phi) {:.6}", phi.rho)?;
            }
        }
        if let Some(c) = &self.traffic {
            writeln!(
                f,
                "traffic: eta*beta {:.6}  J^beta asymmetry {:.3e}  negative definite {}  max eigenvalue {:.6}",
                c.eta_beta,
                c.asymmetry,
                c.negative_definite,
                c.symmetric_eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            )?;
        }
        if let Some(tau) = &self.tau {
            writeln!(f, "invariant measure at rest point {}", vec_fmt(tau))?;
        }
        if let Some(c) = &self.condition {
            crate::check::write_condition(f, c, self.lipschitz.as_ref())?;
        }
        Ok(())
    }
}
