//! Service configuration: a TOML file plus environment overrides.

use std::path::{Path, PathBuf};

use lokrisk_core::consensus::DEFAULT_EXACT_BOUND;
use lokrisk_core::store::Settings;
use lokrisk_core::LikelihoodRegion;
use serde::Deserialize;

use crate::error::AppError;

pub const PORT_ENV: &str = "LOKRISK_PORT";
pub const STORAGE_ENV: &str = "LOKRISK_STORAGE";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub port: u16,
    pub storage_path: PathBuf,
    /// JSON file with `{inner, outer}` curves; the built-in region if absent.
    pub region_path: Option<PathBuf>,
    pub t: f64,
    pub exact_bound: usize,
    /// Concurrent consensus solves allowed in the server.
    pub solver_workers: usize,
    #[serde(skip)]
    pub region: LikelihoodRegion,
}

impl Default for Config {
    fn default() -> Self {
        let s = Settings::default();
        Self {
            port: 8080,
            storage_path: PathBuf::from("data"),
            region_path: None,
            t: s.t,
            exact_bound: DEFAULT_EXACT_BOUND,
            solver_workers: 2,
            region: s.region,
        }
    }
}

impl Config {
    /// Reads `path` (or starts from defaults), applies `LOKRISK_PORT` and
    /// `LOKRISK_STORAGE`, and loads the region file.
    pub fn load(path: Option<&Path>) -> Result<Self, AppError> {
        Self::load_with_env(path, |k| std::env::var(k).ok())
    }

    pub fn load_with_env(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, AppError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| AppError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str::<Config>(&text).map_err(|e| AppError::Config(format!("{}: {e}", p.display())))?
            }
            None => Config::default(),
        };
        if let Some(port) = env(PORT_ENV) {
            cfg.port = port
                .parse()
                .map_err(|_| AppError::Config(format!("{PORT_ENV}={port} is not a port number")))?;
        }
        if let Some(dir) = env(STORAGE_ENV) {
            cfg.storage_path = PathBuf::from(dir);
        }
        if let Some(rp) = &cfg.region_path {
            // relative region paths are taken from the config file's directory
            let rp = match path.and_then(Path::parent) {
                Some(dir) if rp.is_relative() => dir.join(rp),
                _ => rp.clone(),
            };
            cfg.region = read_region(&rp)?;
        }
        cfg.settings().validate().map_err(|e| AppError::Config(e.to_string()))?;
        if cfg.solver_workers == 0 {
            return Err(AppError::Config("solver_workers must be at least 1".into()));
        }
        Ok(cfg)
    }

    /// Settings given to newly created workspaces.
    pub fn settings(&self) -> Settings {
        Settings {
            t: self.t,
            region: self.region.clone(),
            exact_bound: self.exact_bound,
        }
    }
}

pub fn read_region(path: &Path) -> Result<LikelihoodRegion, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
    let region: LikelihoodRegion =
        serde_json::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
    region
        .validate()
        .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
    Ok(region)
}
