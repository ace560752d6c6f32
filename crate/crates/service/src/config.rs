//! Flat `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Every error names the file and, where one exists, the offending line.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use redzone_core::data::SynthSpec;
use redzone_core::engine::{InitDesign, KernelSettings, SessionConfig, Strategy};
use redzone_core::gp::KernelShape;
use redzone_core::transfer::LssBase;
use redzone_core::{KernelParams, Position};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maps::{GridSpec, MapSpec, SourceSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: cannot read: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Line {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {msg}")]
    File { path: String, msg: String },
}

/// Everything a batch run needs, after defaults are applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub map: MapSpec,
    pub source: Option<SourceSpec>,
    pub session: SessionConfig,
    /// Oracle noise sd; `noise_fraction` of the map range when absent.
    pub noise_sd: Option<f64>,
    pub noise_fraction: f64,
    /// Oracle noise stream; `seed + 1000` when absent.
    pub oracle_seed: Option<u64>,
    /// Measurements to take; the iteration cap when absent.
    pub budget: Option<usize>,
    pub snapshot_steps: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            map: MapSpec::edge_band_benchmark(),
            source: None,
            session: SessionConfig::default(),
            noise_sd: None,
            noise_fraction: 0.01,
            oracle_seed: None,
            budget: None,
            snapshot_steps: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn oracle_seed(&self) -> u64 {
        self.oracle_seed
            .unwrap_or_else(|| self.session.seed.wrapping_add(1000))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &path.display().to_string(), &base)
    }

    /// Parse config text. Relative map paths resolve against `base`.
    pub fn parse(text: &str, name: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut e = Entries::read(text, name)?;
        let cfg = build(&mut e, base)?;
        e.finish()?;
        Ok(cfg)
    }
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Entries {
    path: String,
    map: BTreeMap<String, Entry>,
}

impl Entries {
    fn read(text: &str, path: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError::Line {
                path: path.to_string(),
                line,
                msg,
            };
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{content}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(err("empty key".into()));
            }
            if let Some(prev) = map.get(k) {
                let prev: &Entry = prev;
                return Err(err(format!("`{k}` already set on line {}", prev.line)));
            }
            map.insert(
                k.to_string(),
                Entry {
                    value: v.to_string(),
                    line,
                    used: false,
                },
            );
        }
        Ok(Self {
            path: path.to_string(),
            map,
        })
    }

    fn at(&self, key: &str, msg: impl Display) -> ConfigError {
        match self.map.get(key) {
            Some(e) => ConfigError::Line {
                path: self.path.clone(),
                line: e.line,
                msg: format!("{key}: {msg}"),
            },
            None => ConfigError::File {
                path: self.path.clone(),
                msg: format!("{key}: {msg}"),
            },
        }
    }

    fn raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.map.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some((v, _)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| self.at(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| self.at(key, "required key is missing"))
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: Display,
    {
        let Some((v, _)) = self.raw(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| self.at(key, format!("cannot parse `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.map.iter().find(|(_, e)| !e.used) {
            Some((k, e)) => Err(ConfigError::Line {
                path: self.path,
                line: e.line,
                msg: format!("unknown key `{k}`"),
            }),
            None => Ok(()),
        }
    }
}

fn map_spec(e: &mut Entries, prefix: &str, base: &Path) -> Result<Option<MapSpec>, ConfigError> {
    let key = |s: &str| format!("{prefix}.{s}");
    let Some(kind) = e.get::<String>(&key("kind"))? else {
        return Ok(None);
    };
    if kind == "none" {
        return Ok(None);
    }
    if kind == "file" {
        let p: PathBuf = e.require(&key("file"))?;
        let path = if p.is_relative() { base.join(p) } else { p };
        return Ok(Some(MapSpec::File { path }));
    }
    let grid = GridSpec {
        cols: e.or(&key("cols"), 40)?,
        rows: e.or(&key("rows"), 40)?,
        spacing_mm: e.or(&key("spacing_mm"), 2.0)?,
        origin_mm: Position::new(e.or(&key("origin_x_mm"), 0.0)?, e.or(&key("origin_y_mm"), 0.0)?),
    };
    let seed = e.or(&key("seed"), 0)?;
    let synth = match kind.as_str() {
        "edge_band" => SynthSpec::EdgeBand {
            high: e.or(&key("high"), 5.0)?,
            low: e.or(&key("low"), 1.0)?,
            band_mm: e.or(&key("band_mm"), 10.0)?,
        },
        "sinusoid_ridge" => SynthSpec::SinusoidRidge {
            offset: e.or(&key("offset"), 2.0)?,
            amplitude: e.or(&key("amplitude"), 1.0)?,
            wavelength_mm: e.require(&key("wavelength_mm"))?,
        },
        "gp_draw" => SynthSpec::GpDraw {
            offset: e.or(&key("offset"), 2.0)?,
            amplitude: e.or(&key("amplitude"), 1.0)?,
            length_scale_mm: e.require(&key("length_scale_mm"))?,
        },
        other => {
            return Err(e.at(
                &key("kind"),
                format!("unknown map kind `{other}` (expected edge_band|sinusoid_ridge|gp_draw|file|none)"),
            ))
        }
    };
    Ok(Some(MapSpec::Synthetic { grid, synth, seed }))
}

fn kernel(e: &mut Entries) -> Result<KernelSettings, ConfigError> {
    let mode = e.or("kernel", "scaled".to_string())?;
    let d = KernelShape::DEFAULT;
    Ok(match mode.as_str() {
        "scaled" => KernelSettings::Scaled {
            shape: KernelShape {
                amplitude_factor: e.or("kernel.amplitude_factor", d.amplitude_factor)?,
                length_fraction: e.or("kernel.length_fraction", d.length_fraction)?,
                noise_fraction: e.or("kernel.noise_fraction", d.noise_fraction)?,
            },
        },
        "search" => KernelSettings::Search {
            refit_every: e.or("kernel.refit_every", 10)?,
            min_points: e.or("kernel.min_points", 2)?,
        },
        "fixed" => {
            let params = KernelParams::new(
                e.require("kernel.amplitude")?,
                e.require("kernel.length_scale")?,
                e.require("kernel.noise_variance")?,
            )
            .map_err(|err| e.at("kernel", err))?;
            KernelSettings::Fixed { params }
        }
        other => {
            return Err(e.at(
                "kernel",
                format!("unknown kernel mode `{other}` (expected scaled|search|fixed)"),
            ))
        }
    })
}

fn build(e: &mut Entries, base: &Path) -> Result<RunConfig, ConfigError> {
    let map = map_spec(e, "map", base)?.ok_or_else(|| e.at("map.kind", "required key is missing"))?;
    let source = match map_spec(e, "source", base)? {
        Some(map) => Some(SourceSpec {
            map,
            stride: e.or("source.stride", 1)?,
        }),
        None => None,
    };

    let init = match (e.get::<usize>("init.k")?, e.list::<usize>("init.indices")?) {
        (Some(_), Some(_)) => return Err(e.at("init.indices", "conflicts with init.k")),
        (_, Some(indices)) => InitDesign::Explicit { indices },
        (Some(k), None) => InitDesign::RandomK { k },
        (None, None) => InitDesign::default(),
    };
    let forced_shift = match e.list::<f64>("forced_shift")? {
        None => None,
        Some(v) if v.len() == 2 => Some((v[0], v[1])),
        Some(_) => return Err(e.at("forced_shift", "expected `gamma, eta`")),
    };
    let d = SessionConfig::default();
    let session = SessionConfig {
        strategy: e.or::<Strategy>("strategy", d.strategy)?,
        theta: e.or("theta", d.theta)?,
        epsilon: e.or("epsilon", d.epsilon)?,
        max_iterations: e.get("max_iterations")?,
        seed: e.or("seed", d.seed)?,
        init,
        kernel: kernel(e)?,
        sticky_classification: e.or("sticky_classification", d.sticky_classification)?,
        lss_base: e.or::<LssBase>("lss_base", d.lss_base)?,
        forced_shift,
    };
    let defaults = RunConfig::default();
    Ok(RunConfig {
        map,
        source,
        session,
        noise_sd: e.get("noise_sd")?,
        noise_fraction: e.or("noise_fraction", defaults.noise_fraction)?,
        oracle_seed: e.get("oracle_seed")?,
        budget: e.get("budget")?,
        snapshot_steps: e.list("snapshot_steps")?.unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(text, "run.conf", Path::new("/data"))
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse("map.kind = edge_band\n").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn full_config() {
        let c = parse(
            "# benchmark\n\
             map.kind = edge_band   # surface\n\
             map.band_mm = 6\n\
             source.kind = file\n\
             source.file = src.csv\n\
             source.stride = 2\n\
             strategy = lss-atl\n\
             theta = 2.5\n\
             seed = 7\n\
             init.indices = 0, 5, 9\n\
             kernel = fixed\n\
             kernel.amplitude = 1\n\
             kernel.length_scale = 4\n\
             kernel.noise_variance = 0.01\n\
             lss_base = raw\n\
             forced_shift = 1, 0\n\
             snapshot_steps = 10,25,75\n\
             budget = 80\n",
        )
        .unwrap();
        assert_eq!(c.session.strategy, Strategy::LssAtl);
        assert_eq!(c.session.theta, 2.5);
        assert_eq!(c.session.init, InitDesign::Explicit { indices: vec![0, 5, 9] });
        assert_eq!(c.session.lss_base, LssBase::Raw);
        assert_eq!(c.session.forced_shift, Some((1.0, 0.0)));
        assert_eq!(c.snapshot_steps, vec![10, 25, 75]);
        assert_eq!(c.budget, Some(80));
        assert_eq!(c.oracle_seed(), 1007);
        let src = c.source.unwrap();
        assert_eq!(src.stride, 2);
        assert_eq!(src.map, MapSpec::File { path: PathBuf::from("/data/src.csv") });
        match c.map {
            MapSpec::Synthetic { synth: SynthSpec::EdgeBand { band_mm, .. }, .. } => assert_eq!(band_mm, 6.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_cite_line() {
        let err = parse("map.kind = edge_band\n\ntheta = two\n").unwrap_err().to_string();
        assert!(err.starts_with("run.conf:3:"), "{err}");
        let err = parse("map.kind = edge_band\nthta = 2\n").unwrap_err().to_string();
        assert_eq!(err, "run.conf:2: unknown key `thta`");
        let err = parse("map.kind = edge_band\nseed = 1\nseed = 2\n").unwrap_err().to_string();
        assert_eq!(err, "run.conf:3: `seed` already set on line 2");
        let err = parse("map.kind = edge_band\nstrategy = greedy\n").unwrap_err().to_string();
        assert!(err.starts_with("run.conf:2: strategy:"), "{err}");
        let err = parse("no equals here\n").unwrap_err().to_string();
        assert!(err.starts_with("run.conf:1:"), "{err}");
        let err = parse("theta = 2\n").unwrap_err().to_string();
        assert_eq!(err, "run.conf: map.kind: required key is missing");
    }
}
