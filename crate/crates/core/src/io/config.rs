//! `key=value` configuration files for tracker parameters and scenario
//! specs. Lines starting with `#` and blank lines are skipped; unknown keys
//! are rejected; duplicate keys take the last value and produce a warning.

use thiserror::Error;

use crate::simulator::{OcclusionWindow, ScenarioSpec, SimulatorError};
use crate::types::{CandidateSigma, ParamsError, TrackerParams};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Scenario(#[from] SimulatorError),
}

/// Parsed parameters plus any duplicate-key warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub params: TrackerParams,
    pub warnings: Vec<String>,
}

fn key_values(content: &str) -> Result<(Vec<(String, String)>, Vec<String>), ConfigError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut warnings = Vec::new();
    for (index, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: index + 1 });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if pairs.iter().any(|(k, _)| *k == key) {
            warnings.push(format!("duplicate key `{key}`: keeping the last value"));
        }
        pairs.push((key, value));
    }
    Ok((pairs, warnings))
}

fn bad<T>(key: &str, reason: &str) -> Result<T, ConfigError> {
    Err(ConfigError::BadValue {
        key: key.to_string(),
        reason: reason.to_string(),
    })
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    match value.parse() {
        Ok(v) => Ok(v),
        Err(_) => bad(key, "expected a real number"),
    }
}

fn parse_usize(key: &str, value: &str) -> Result<usize, ConfigError> {
    match value.parse() {
        Ok(v) => Ok(v),
        Err(_) => bad(key, "expected a nonnegative integer"),
    }
}

fn parse_u32(key: &str, value: &str) -> Result<u32, ConfigError> {
    match value.parse() {
        Ok(v) => Ok(v),
        Err(_) => bad(key, "expected a nonnegative integer"),
    }
}

fn parse_pair(key: &str, value: &str) -> Result<(f64, f64), ConfigError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return bad(key, "expected two comma-separated numbers");
    }
    Ok((parse_f64(key, parts[0])?, parse_f64(key, parts[1])?))
}

fn parse_triple(key: &str, value: &str) -> Result<(f64, f64, f64), ConfigError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return bad(key, "expected three comma-separated numbers");
    }
    Ok((
        parse_f64(key, parts[0])?,
        parse_f64(key, parts[1])?,
        parse_f64(key, parts[2])?,
    ))
}

/// Semicolon-separated list of colon-separated pairs, e.g. `3:1.5;-2:0`.
fn parse_pair_list(key: &str, value: &str) -> Result<Vec<(f64, f64)>, ConfigError> {
    value
        .split(';')
        .map(str::trim)
        .filter(|item| !item.is_empty())
        .map(|item| {
            let parts: Vec<&str> = item.split(':').map(str::trim).collect();
            if parts.len() != 2 {
                return bad(key, "expected `x:y` items separated by `;`");
            }
            Ok((parse_f64(key, parts[0])?, parse_f64(key, parts[1])?))
        })
        .collect()
}

/// Loads tracker parameters over the built-in defaults and validates the
/// result.
pub fn load_config(content: &str) -> Result<LoadedConfig, ConfigError> {
    let (pairs, warnings) = key_values(content)?;
    let mut params = TrackerParams::default();
    for (key, value) in &pairs {
        match key.as_str() {
            "lambda_lost" => params.lambda_lost = parse_f64(key, value)?,
            "lambda_tracked" => params.lambda_tracked = parse_f64(key, value)?,
            "lambda_new" => params.lambda_new = parse_f64(key, value)?,
            "sigma_s" => {
                let (x, y, scale) = parse_triple(key, value)?;
                params.sigma_s = CandidateSigma::new(x, y, scale);
            }
            "alpha" => params.alpha = parse_f64(key, value)?,
            "candidate_count" => params.candidate_count = parse_usize(key, value)?,
            "update_threshold" => params.update_threshold = parse_f64(key, value)?,
            "lost_patience" => params.lost_patience = parse_u32(key, value)?,
            "mu" => params.mu = parse_f64(key, value)?,
            "n_pos" => params.n_pos = parse_usize(key, value)?,
            "n_neg" => params.n_neg = parse_usize(key, value)?,
            "theta_pos" => params.theta_pos = parse_f64(key, value)?,
            "theta_neg" => params.theta_neg = parse_f64(key, value)?,
            "accept_threshold" => params.accept_threshold = parse_f64(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
    }
    params.validate()?;
    Ok(LoadedConfig { params, warnings })
}

/// Renders parameters in the exact format [`load_config`] accepts; loading
/// the result reproduces the input parameters.
pub fn render_config(params: &TrackerParams) -> String {
    format!(
        "lambda_lost={}\nlambda_tracked={}\nlambda_new={}\nsigma_s={},{},{}\nalpha={}\n\
         candidate_count={}\nupdate_threshold={}\nlost_patience={}\nmu={}\nn_pos={}\n\
         n_neg={}\ntheta_pos={}\ntheta_neg={}\naccept_threshold={}\n",
        params.lambda_lost,
        params.lambda_tracked,
        params.lambda_new,
        params.sigma_s.x,
        params.sigma_s.y,
        params.sigma_s.scale,
        params.alpha,
        params.candidate_count,
        params.update_threshold,
        params.lost_patience,
        params.mu,
        params.n_pos,
        params.n_neg,
        params.theta_pos,
        params.theta_neg,
        params.accept_threshold,
    )
}

/// Loads a scenario spec over [`ScenarioSpec::default`] and validates it.
pub fn load_scenario(content: &str) -> Result<ScenarioSpec, ConfigError> {
    let (pairs, _warnings) = key_values(content)?;
    let mut spec = ScenarioSpec::default();
    for (key, value) in &pairs {
        match key.as_str() {
            "num_targets" => spec.num_targets = parse_usize(key, value)?,
            "frames" => spec.frames = parse_u32(key, value)?,
            "arena" => spec.arena = parse_pair(key, value)?,
            "box_size" => spec.box_size = parse_pair(key, value)?,
            "speed" => spec.speed_range = parse_pair(key, value)?,
            "velocities" => spec.velocities = Some(parse_pair_list(key, value)?),
            "spawns" => spec.spawns = Some(parse_pair_list(key, value)?),
            "sigma_motion" => spec.sigma_motion = parse_f64(key, value)?,
            "appearance_separation" => spec.appearance_separation = parse_f64(key, value)?,
            "feature_noise" => spec.feature_noise = parse_f64(key, value)?,
            "miss_rate" => spec.miss_rate = parse_f64(key, value)?,
            "fp_rate" => spec.fp_rate = parse_f64(key, value)?,
            "det_noise" => spec.det_noise = parse_f64(key, value)?,
            "occlusions" => {
                let mut windows = Vec::new();
                for item in value.split(';').map(str::trim).filter(|i| !i.is_empty()) {
                    let parts: Vec<&str> = item.split(':').map(str::trim).collect();
                    if parts.len() != 3 {
                        return bad(key, "expected `target:start:duration` items");
                    }
                    windows.push(OcclusionWindow {
                        target: parse_u32(key, parts[0])? as u64,
                        start: parse_u32(key, parts[1])?,
                        duration: parse_u32(key, parts[2])?,
                    });
                }
                spec.occlusions = windows;
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
    }
    spec.validate()?;
    Ok(spec)
}
