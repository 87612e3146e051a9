//! Flat `key = value` experiment files.
//!
//! Blank lines and lines starting with `#` are ignored. The keys `env`, `seed`,
//! `episodes` and `horizon` are required; every other key overrides the preset
//! of the chosen environment. Nested settings use dotted keys
//! (`mppi.rollouts`, `pendulum.x0`) and vectors are comma separated.

use safe_ctrl_core::envs::EnvId;
use safe_ctrl_core::ExperimentConfig;
use std::collections::BTreeMap;
use std::path::Path;

pub const REQUIRED_KEYS: [&str; 4] = ["env", "seed", "episodes", "horizon"];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("key `{0}` appears more than once")]
    Duplicate(String),
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("unknown environment `{0}` (expected pendulum, unicycle, unicycle-obstacle or synthetic-linear)")]
    UnknownEnv(String),
    #[error("key `{key}`: cannot parse `{value}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("override `{0}` is not of the form key=value")]
    BadOverride(String),
    #[error(transparent)]
    Invalid(#[from] safe_ctrl_core::Error),
}

/// A typed config slot that can be printed and parsed.
trait Slot {
    fn render(&self) -> String;
    fn assign(&mut self, text: &str) -> Result<(), String>;
}

fn render_f64(v: f64) -> String {
    format!("{v}")
}

fn parse_f64(text: &str) -> Result<f64, String> {
    text.trim().parse::<f64>().map_err(|e| e.to_string())
}

impl Slot for f64 {
    fn render(&self) -> String {
        render_f64(*self)
    }
    fn assign(&mut self, text: &str) -> Result<(), String> {
        *self = parse_f64(text)?;
        Ok(())
    }
}

impl Slot for usize {
    fn render(&self) -> String {
        self.to_string()
    }
    fn assign(&mut self, text: &str) -> Result<(), String> {
        *self = text.trim().parse().map_err(|e: std::num::ParseIntError| e.to_string())?;
        Ok(())
    }
}

impl Slot for u64 {
    fn render(&self) -> String {
        self.to_string()
    }
    fn assign(&mut self, text: &str) -> Result<(), String> {
        *self = text.trim().parse().map_err(|e: std::num::ParseIntError| e.to_string())?;
        Ok(())
    }
}

impl Slot for bool {
    fn render(&self) -> String {
        self.to_string()
    }
    fn assign(&mut self, text: &str) -> Result<(), String> {
        *self = match text.trim() {
            "true" => true,
            "false" => false,
            other => return Err(format!("expected true or false, found `{other}`")),
        };
        Ok(())
    }
}

fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',').map(parse_f64).collect()
}

fn render_list(values: &[f64]) -> String {
    values.iter().map(|v| render_f64(*v)).collect::<Vec<_>>().join(",")
}

impl Slot for Vec<f64> {
    fn render(&self) -> String {
        render_list(self)
    }
    fn assign(&mut self, text: &str) -> Result<(), String> {
        *self = parse_list(text)?;
        Ok(())
    }
}

impl<const N: usize> Slot for [f64; N] {
    fn render(&self) -> String {
        render_list(self)
    }
    fn assign(&mut self, text: &str) -> Result<(), String> {
        let values = parse_list(text)?;
        *self = values
            .try_into()
            .map_err(|v: Vec<f64>| format!("expected {N} values, found {}", v.len()))?;
        Ok(())
    }
}

/// Which section a key belongs to; environment sections are only written
/// for the environment they configure.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    General,
    Pendulum,
    Unicycle,
    Synthetic,
}

impl Section {
    fn of(env: EnvId) -> Self {
        match env {
            EnvId::Pendulum => Section::Pendulum,
            EnvId::Unicycle | EnvId::UnicycleObstacle => Section::Unicycle,
            EnvId::SyntheticLinear => Section::Synthetic,
        }
    }
}

/// Visits every settable field except `env`, in canonical order.
fn visit(cfg: &mut ExperimentConfig, f: &mut dyn FnMut(Section, &'static str, &mut dyn Slot)) {
    use Section::*;
    f(General, "seed", &mut cfg.seed);
    f(General, "episodes", &mut cfg.episodes);
    f(General, "horizon", &mut cfg.horizon);
    f(General, "ridge_lambda", &mut cfg.ridge_lambda);
    f(General, "norm_bound", &mut cfg.norm_bound);
    f(General, "delta", &mut cfg.delta);
    f(General, "delta_s", &mut cfg.delta_s);
    f(General, "eta", &mut cfg.eta);
    f(General, "epsilon", &mut cfg.epsilon);
    f(General, "thompson_scale", &mut cfg.thompson_scale);
    f(General, "thompson_max_attempts", &mut cfg.thompson_max_attempts);
    f(General, "thompson_draws", &mut cfg.thompson_draws);
    f(General, "initial_samples", &mut cfg.initial_samples);
    f(General, "feature_dim", &mut cfg.feature_dim);
    f(General, "feature_bandwidth", &mut cfg.feature_bandwidth);
    f(General, "mppi.rollouts", &mut cfg.mppi.rollouts);
    f(General, "mppi.horizon", &mut cfg.mppi.horizon);
    f(General, "mppi.temperature", &mut cfg.mppi.temperature);
    f(General, "mppi.exploration", &mut cfg.mppi.exploration);
    f(General, "test_trials", &mut cfg.test_trials);
    f(General, "reference_episodes", &mut cfg.reference_episodes);
    f(General, "random_initial_state", &mut cfg.random_initial_state);
    f(General, "margin_scale", &mut cfg.margin_scale);

    let p = &mut cfg.pendulum;
    f(Pendulum, "pendulum.gravity", &mut p.gravity);
    f(Pendulum, "pendulum.dt", &mut p.dt);
    f(Pendulum, "pendulum.mass", &mut p.mass);
    f(Pendulum, "pendulum.length", &mut p.length);
    f(Pendulum, "pendulum.nominal_mass", &mut p.nominal_mass);
    f(Pendulum, "pendulum.nominal_length", &mut p.nominal_length);
    f(Pendulum, "pendulum.max_torque", &mut p.max_torque);
    f(Pendulum, "pendulum.disturbance", &mut p.disturbance);
    f(Pendulum, "pendulum.disturbance_phase", &mut p.disturbance_phase);
    f(Pendulum, "pendulum.lower_angle", &mut p.lower_angle);
    f(Pendulum, "pendulum.upper_angle", &mut p.upper_angle);
    f(Pendulum, "pendulum.noise", &mut p.noise);
    f(Pendulum, "pendulum.x0", &mut p.x0);
    f(Pendulum, "pendulum.x0_spread", &mut p.x0_spread);
    f(Pendulum, "pendulum.data_speed", &mut p.data_speed);

    let u = &mut cfg.unicycle;
    f(Unicycle, "unicycle.dt", &mut u.dt);
    f(Unicycle, "unicycle.max_speed", &mut u.max_speed);
    f(Unicycle, "unicycle.max_turn_rate", &mut u.max_turn_rate);
    f(Unicycle, "unicycle.wind_gain", &mut u.wind_gain);
    f(Unicycle, "unicycle.wind_rect_speed", &mut u.wind_rect_speed);
    f(Unicycle, "unicycle.wind_rect", &mut u.wind_rect);
    f(Unicycle, "unicycle.goal", &mut u.goal);
    f(Unicycle, "unicycle.position_weight", &mut u.position_weight);
    f(Unicycle, "unicycle.control_weight", &mut u.control_weight);
    f(Unicycle, "unicycle.cost_scale", &mut u.cost_scale);
    f(Unicycle, "unicycle.obstacle_center", &mut u.obstacle_center);
    f(Unicycle, "unicycle.obstacle_radius", &mut u.obstacle_radius);
    f(Unicycle, "unicycle.noise", &mut u.noise);
    f(Unicycle, "unicycle.x0", &mut u.x0);
    f(Unicycle, "unicycle.x0_spread", &mut u.x0_spread);
    f(Unicycle, "unicycle.state_box", &mut u.state_box);
    f(Unicycle, "unicycle.data_box", &mut u.data_box);

    let s = &mut cfg.synthetic;
    f(Synthetic, "synthetic.weights", &mut s.weights);
    f(Synthetic, "synthetic.max_control", &mut s.max_control);
    f(Synthetic, "synthetic.goal", &mut s.goal);
    f(Synthetic, "synthetic.control_weight", &mut s.control_weight);
    f(Synthetic, "synthetic.noise", &mut s.noise);
    f(Synthetic, "synthetic.x0", &mut s.x0);
    f(Synthetic, "synthetic.x0_spread", &mut s.x0_spread);
    f(Synthetic, "synthetic.state_box", &mut s.state_box);
}

/// Every key accepted besides `env`, in canonical order.
pub fn known_keys() -> Vec<&'static str> {
    let mut cfg = ExperimentConfig::preset(EnvId::Pendulum);
    let mut keys = Vec::new();
    visit(&mut cfg, &mut |_, key, _| keys.push(key));
    keys
}

/// Sets one key on an existing config. `env` cannot be changed this way
/// because it selects the preset.
pub fn set_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    let mut outcome = Err(ConfigError::UnknownKey(key.to_string()));
    visit(cfg, &mut |_, name, slot| {
        if name == key {
            outcome = slot.assign(value).map_err(|reason| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                reason,
            });
        }
    });
    outcome
}

/// Splits `key=value`, as given to `--override`.
pub fn split_override(text: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(text.to_string()))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(ConfigError::BadOverride(text.to_string()));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

/// Parses the raw `key = value` pairs of a config file.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut pairs = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = split_override(line).map_err(|_| ConfigError::Syntax {
            line: i + 1,
            text: line.to_string(),
        })?;
        if pairs.insert(k.clone(), v).is_some() {
            return Err(ConfigError::Duplicate(k));
        }
    }
    Ok(pairs)
}

/// Builds a validated config from file text and `key=value` overrides; later
/// overrides win.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig, ConfigError> {
    let mut pairs = parse_pairs(text)?;
    for (k, v) in overrides {
        pairs.insert(k.clone(), v.clone());
    }
    config_from_pairs(&pairs)
}

pub fn config_from_pairs(pairs: &BTreeMap<String, String>) -> Result<ExperimentConfig, ConfigError> {
    for key in REQUIRED_KEYS {
        if !pairs.contains_key(key) {
            return Err(ConfigError::MissingKey(key));
        }
    }
    let env_name = &pairs["env"];
    let env = EnvId::parse(env_name).ok_or_else(|| ConfigError::UnknownEnv(env_name.clone()))?;
    let mut cfg = ExperimentConfig::preset(env);
    for (k, v) in pairs {
        if k != "env" {
            set_key(&mut cfg, k, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, overrides)
}

/// Canonical text form: `env` first, then every general key and the keys of
/// the environment's own section. Parsing it back gives an equal config.
pub fn to_canonical(cfg: &ExperimentConfig) -> String {
    let own = Section::of(cfg.env);
    let mut out = format!("env = {}\n", cfg.env.as_str());
    let mut copy = cfg.clone();
    visit(&mut copy, &mut |section, key, slot| {
        if section == Section::General || section == own {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&slot.render());
            out.push('\n');
        }
    });
    out
}
