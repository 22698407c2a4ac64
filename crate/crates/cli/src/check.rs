use std::fmt;

use adaptive_play::markov::{condition_report, estimate_lipschitz, ConditionReport, LipschitzEstimate, MarkovEnvironment};

use crate::config::ExperimentConfig;
use crate::model::Model;
use crate::CliError;

/// Which convergence guarantee `2 eta alpha` places the game in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `< 1`: unique rest point, global attractor.
    Contraction,
    /// `[1, 2)`: unique rest point, linearly stable.
    UniqueStable,
    /// `>= 2`: no guarantee.
    Open,
}

impl Regime {
    pub fn of(two_eta_alpha: f64) -> Self {
        if two_eta_alpha < 1.0 {
            Regime::Contraction
        } else if two_eta_alpha < 2.0 {
            Regime::UniqueStable
        } else {
            Regime::Open
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Contraction => "contraction: unique globally attracting rest point",
            Regime::UniqueStable => "unique rest point, linearly stable",
            Regime::Open => "no uniqueness guarantee",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub hash: String,
    pub eta: f64,
    pub alpha: f64,
    pub two_eta_alpha: f64,
    pub regime: Regime,
    /// Traffic networks: `eta beta`, below 1 for the stability certificate.
    pub eta_beta: Option<f64>,
    pub condition: Option<ConditionReport>,
    pub lipschitz: Option<LipschitzEstimate>,
}

/// Lipschitz estimate of the invariant measure; `None` for a constant chain.
pub(crate) fn lipschitz(env: &MarkovEnvironment, cfg: &ExperimentConfig) -> Result<Option<LipschitzEstimate>, CliError> {
    if env.chain().is_constant() {
        return Ok(None);
    }
    let n = cfg.lipschitz_samples;
    Ok(Some(estimate_lipschitz(env, n, n, 1e-4, cfg.seeds[0])?))
}

pub fn check(cfg: &ExperimentConfig) -> Result<CheckReport, CliError> {
    let model = Model::load(cfg)?;
    let rule = model.rule(cfg)?;
    let alpha = rule.alpha();
    let (eta, eta_beta, condition, lipschitz) = match &model {
        Model::Game(g) => (g.eta(), None, None, None),
        Model::Traffic { net, .. } => (net.eta(), Some(net.eta() * rule.beta(0)), None, None),
        Model::Environment(env) => {
            let est = lipschitz(env, cfg)?;
            let c = condition_report(env, &rule, est.as_ref().map_or(0.0, |e| e.k))?;
            (env.eta_bar(), None, Some(c), est)
        }
    };
    Ok(CheckReport {
        hash: cfg.hash.clone(),
        eta,
        alpha,
        two_eta_alpha: 2.0 * eta * alpha,
        regime: Regime::of(2.0 * eta * alpha),
        eta_beta,
        condition,
        lipschitz,
    })
}

pub(crate) fn write_condition(
    f: &mut fmt::Formatter<'_>,
    c: &ConditionReport,
    est: Option<&LipschitzEstimate>,
) -> fmt::Result {
    writeln!(
        f,
        "environment: |W| {}  eta_bar {:.6}  eta_tilde {:.6}  k {:.6}{}",
        c.num_states,
        c.eta_bar,
        c.eta_tilde,
        c.k,
        if c.constant_chain { " (constant chain)" } else { "" }
    )?;
    if let Some(e) = est {
        writeln!(f, "  k estimated from {} quotients at resolution {:e}", e.quotients, e.resolution)?;
    }
    writeln!(f, "  2*eta_bar*alpha + eta_tilde*sqrt(|W|)*k = {:.6}  (< 1: {})", c.lhs, c.main_ok)?;
    writeln!(f, "  2*max beta = {:.6}  (< 1: {})", c.beta_cap, c.beta_cap_ok)?;
    writeln!(f, "  convergence condition satisfied: {}", c.satisfied)
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "config_hash {}", self.hash)?;
        writeln!(f, "eta {:.6}  alpha {:.6}  2*eta*alpha {:.6}  ({})", self.eta, self.alpha, self.two_eta_alpha, self.regime)?;
        if let Some(eb) = self.eta_beta {
            writeln!(f, "traffic: eta*beta {eb:.6}  (< 1: {})", eb < 1.0)?;
        }
        if let Some(c) = &self.condition {
            write_condition(f, c, self.lipschitz.as_ref())?;
        }
        Ok(())
    }
}
