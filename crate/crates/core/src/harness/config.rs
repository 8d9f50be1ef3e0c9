//! Run configuration. Keys mirror the hyperparameter names used in the
//! published tables (`EPSILON_MIN`, `ALPHA`, `TAU`, ...); every key is optional
//! and falls back to the documented default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decision::{RewardParams, Td3Config, TransitionParams};
use crate::error::{Error, Result};
use crate::lightae::{Constraints, TeacherConfig};
use crate::verify::FeedbackState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportMode {
    #[default]
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub terminals: usize,
    pub rounds: usize,
    pub rows_per_round: usize,
    /// Rounds between verifications.
    pub verify_cadence: usize,
    /// Most recent noisy rows kept per terminal for verification.
    pub verify_window: usize,
    /// Agent updates after each feedback message; 0 disables retuning.
    pub fine_tune_steps: usize,
    pub transport: TransportMode,
    pub timeout_ms: u64,
    /// Forces every chosen budget into this range (used to provoke feedback).
    pub eps_override: Option<[f64; 2]>,
    pub detector: Option<PathBuf>,
    pub agent: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 7,
            terminals: 1,
            rounds: 50,
            rows_per_round: 20,
            verify_cadence: 10,
            verify_window: 400,
            fine_tune_steps: 200,
            transport: TransportMode::InProcess,
            timeout_ms: 5_000,
            eps_override: None,
            detector: None,
            agent: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LightAeSection {
    #[serde(rename = "INPUT_DIM")]
    pub input_dim: usize,
    #[serde(rename = "HIDDEN_SIZES")]
    pub hidden_sizes: Vec<usize>,
    #[serde(rename = "AE_LR")]
    pub ae_lr: f32,
    #[serde(rename = "KD_LR")]
    pub kd_lr: f32,
    #[serde(rename = "BATCH_SIZE")]
    pub batch_size: usize,
    #[serde(rename = "EPOCHS")]
    pub epochs: usize,
    #[serde(rename = "KD_EPOCHS")]
    pub kd_epochs: usize,
    /// Descendant sizes as fractions of each teacher block.
    #[serde(rename = "VARIANT_FRACTIONS")]
    pub variant_fractions: Vec<f64>,
    #[serde(rename = "LATENCY_REDUCTION")]
    pub latency_reduction_pct: f64,
    #[serde(rename = "RESOURCE_REDUCTION")]
    pub resource_reduction_pct: f64,
}

impl Default for LightAeSection {
    fn default() -> Self {
        let t = TeacherConfig::default();
        Self {
            input_dim: t.input_dim,
            hidden_sizes: t.hidden_sizes,
            ae_lr: t.ae_lr,
            kd_lr: t.kd_lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            kd_epochs: t.kd_epochs,
            variant_fractions: vec![0.5, 0.25, 0.1],
            latency_reduction_pct: 20.0,
            resource_reduction_pct: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3Section {
    #[serde(rename = "EPSILON_MIN")]
    pub eps_min: f64,
    #[serde(rename = "EPSILON_MAX")]
    pub eps_max: f64,
    #[serde(rename = "ALPHA")]
    pub alpha: f64,
    #[serde(rename = "BETA")]
    pub beta: f64,
    #[serde(rename = "LAMBDA_E")]
    pub lambda_e: f64,
    #[serde(rename = "GAMMA")]
    pub discount: f64,
    #[serde(rename = "TAU")]
    pub tau: f64,
    #[serde(rename = "ACTOR_LR")]
    pub actor_lr: f64,
    #[serde(rename = "CRITIC_LR")]
    pub critic_lr: f64,
    #[serde(rename = "BUFFER_SIZE")]
    pub buffer_size: usize,
    #[serde(rename = "BATCH_SIZE")]
    pub batch_size: usize,
    #[serde(rename = "POLICY_FREQ")]
    pub policy_delay: usize,
    #[serde(rename = "POLICY_NOISE")]
    pub policy_noise: f64,
    #[serde(rename = "NOISE_CLIP")]
    pub noise_clip: f64,
    #[serde(rename = "EXPLORE_NOISE")]
    pub explore_noise: f64,
    #[serde(rename = "EPISODES")]
    pub episodes: usize,
    #[serde(rename = "STEPS_PER_EPISODE")]
    pub steps_per_episode: usize,
    #[serde(rename = "HIDDEN")]
    pub hidden: usize,
    #[serde(rename = "PRIV_KAPPA")]
    pub kappa: f64,
    #[serde(rename = "PRIV_S0")]
    pub s0: f64,
    #[serde(rename = "PRIV_DELTA")]
    pub delta: f64,
    #[serde(rename = "UTIL_RHO")]
    pub rho: f64,
    #[serde(rename = "UTIL_SIGMA0")]
    pub g0: f64,
    #[serde(rename = "TRANS_ETA")]
    pub eta: f64,
    #[serde(rename = "TRANS_GAMMA")]
    pub gamma_step: f64,
    #[serde(rename = "TRANS_SIGMA")]
    pub sigma_zeta: f64,
}

impl Default for Td3Section {
    fn default() -> Self {
        let r = RewardParams::default();
        let t = Td3Config::default();
        let tr = TransitionParams::default();
        Self {
            eps_min: r.eps_min,
            eps_max: r.eps_max,
            alpha: r.alpha,
            beta: r.beta,
            lambda_e: r.lambda_e,
            discount: t.discount,
            tau: t.tau,
            actor_lr: t.actor_lr,
            critic_lr: t.critic_lr,
            buffer_size: t.buffer_size,
            batch_size: t.batch_size,
            policy_delay: t.policy_delay,
            policy_noise: t.policy_noise,
            noise_clip: t.noise_clip,
            explore_noise: t.explore_noise,
            episodes: t.episodes,
            steps_per_episode: t.steps_per_episode,
            hidden: t.hidden,
            kappa: r.kappa,
            s0: r.s0,
            delta: r.delta,
            rho: r.rho,
            g0: r.g0,
            eta: tr.eta,
            gamma_step: tr.gamma_step,
            sigma_zeta: tr.sigma_zeta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackSection {
    #[serde(rename = "THETA_P")]
    pub privacy_threshold: f64,
    #[serde(rename = "THETA_U")]
    pub utility_threshold: f64,
    #[serde(rename = "STEP")]
    pub step: f64,
    #[serde(rename = "ALPHA_MIN")]
    pub alpha_min: f64,
    #[serde(rename = "ALPHA_MAX")]
    pub alpha_max: f64,
    #[serde(rename = "BETA_MIN")]
    pub beta_min: f64,
    #[serde(rename = "BETA_MAX")]
    pub beta_max: f64,
}

impl Default for FeedbackSection {
    fn default() -> Self {
        let f = FeedbackState::default();
        Self {
            privacy_threshold: f.privacy_threshold,
            utility_threshold: f.utility_threshold,
            step: f.step,
            alpha_min: f.alpha_bounds.0,
            alpha_max: f.alpha_bounds.1,
            beta_min: f.beta_bounds.0,
            beta_max: f.beta_bounds.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub lightae: LightAeSection,
    pub td3: Td3Section,
    pub feedback: FeedbackSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        let bad = |msg: String| Err(Error::Config(msg));
        if r.terminals == 0 || r.rounds == 0 {
            return bad("terminals and rounds must be at least 1".into());
        }
        if r.rows_per_round == 0 || r.verify_cadence == 0 {
            return bad("rows_per_round and verify_cadence must be at least 1".into());
        }
        if r.verify_window < crate::verify::MIN_UTILITY_ROWS {
            return bad(format!(
                "verify_window must hold at least {} rows",
                crate::verify::MIN_UTILITY_ROWS
            ));
        }
        if r.timeout_ms == 0 {
            return bad("timeout_ms must be positive".into());
        }
        if let Some([lo, hi]) = r.eps_override {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("eps_override [{lo}, {hi}] must satisfy 0 < lo <= hi"));
            }
        }
        let wrap = |e: Error| Error::Config(e.to_string());
        self.reward_params().validate().map_err(wrap)?;
        self.transition_params().validate().map_err(wrap)?;
        self.td3_config().validate().map_err(wrap)?;
        self.teacher_config().validate().map_err(wrap)?;
        self.constraints().map_err(wrap)?;
        self.feedback_state().validate().map_err(wrap)?;
        Ok(())
    }

    pub fn reward_params(&self) -> RewardParams {
        let t = &self.td3;
        RewardParams {
            alpha: t.alpha,
            beta: t.beta,
            lambda_e: t.lambda_e,
            kappa: t.kappa,
            s0: t.s0,
            delta: t.delta,
            rho: t.rho,
            g0: t.g0,
            eps_min: t.eps_min,
            eps_max: t.eps_max,
        }
    }

    pub fn transition_params(&self) -> TransitionParams {
        TransitionParams {
            eta: self.td3.eta,
            gamma_step: self.td3.gamma_step,
            sigma_zeta: self.td3.sigma_zeta,
        }
    }

    pub fn td3_config(&self) -> Td3Config {
        let t = &self.td3;
        Td3Config {
            discount: t.discount,
            tau: t.tau,
            actor_lr: t.actor_lr,
            critic_lr: t.critic_lr,
            buffer_size: t.buffer_size,
            batch_size: t.batch_size,
            policy_delay: t.policy_delay,
            policy_noise: t.policy_noise,
            noise_clip: t.noise_clip,
            explore_noise: t.explore_noise,
            episodes: t.episodes,
            steps_per_episode: t.steps_per_episode,
            hidden: t.hidden,
        }
    }

    pub fn teacher_config(&self) -> TeacherConfig {
        let l = &self.lightae;
        TeacherConfig {
            input_dim: l.input_dim,
            hidden_sizes: l.hidden_sizes.clone(),
            ae_lr: l.ae_lr,
            kd_lr: l.kd_lr,
            batch_size: l.batch_size,
            epochs: l.epochs,
            kd_epochs: l.kd_epochs,
        }
    }

    pub fn constraints(&self) -> Result<Constraints> {
        Constraints::new(self.lightae.latency_reduction_pct, self.lightae.resource_reduction_pct)
    }

    pub fn feedback_state(&self) -> FeedbackState {
        let f = &self.feedback;
        FeedbackState {
            alpha: self.td3.alpha,
            beta: self.td3.beta,
            privacy_threshold: f.privacy_threshold,
            utility_threshold: f.utility_threshold,
            step: f.step,
            alpha_bounds: (f.alpha_min, f.alpha_max),
            beta_bounds: (f.beta_min, f.beta_max),
        }
    }

    /// Budget range every released record must respect.
    pub fn eps_bounds(&self) -> (f64, f64) {
        match self.run.eps_override {
            Some([lo, hi]) => (lo, hi),
            None => (self.td3.eps_min, self.td3.eps_max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.reward_params(), RewardParams::default());
        assert_eq!(cfg.td3_config(), Td3Config::default());
    }

    #[test]
    fn table_names_parse_and_round_trip() {
        let cfg = RunConfig::from_toml_str(
            "[run]\nterminals = 3\n[td3]\nEPSILON_MIN = 0.5\nALPHA = 7.5\nTAU = 0.01\n[feedback]\nTHETA_P = 0.7\n",
        )
        .unwrap();
        assert_eq!(cfg.run.terminals, 3);
        assert_eq!(cfg.reward_params().eps_min, 0.5);
        assert_eq!(cfg.feedback_state().alpha, 7.5);
        assert_eq!(cfg.td3_config().tau, 0.01);
        let again = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        assert!(RunConfig::from_toml_str("[run]\nterminals = 0\n").is_err());
        assert!(RunConfig::from_toml_str("[td3]\nALPHAA = 1.0\n").is_err());
        assert!(RunConfig::from_toml_str("[td3]\nPRIV_DELTA = 1.5\n").is_err());
        assert!(RunConfig::from_toml_str("[run]\neps_override = [3.0, 2.0]\n").is_err());
    }
}
