use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointflow::PointFlowConfig;
use crate::softflow::{BackendConfig, SoftFlowConfig};

/// Environment variable that, when set, roots every relative output path.
pub const OUT_ROOT_ENV: &str = "SOFTFLOW_OUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentKind {
    /// 2-D SoftFlow with the discrete coupling backend.
    #[serde(rename = "softflow-2d")]
    SoftFlow2d,
    /// 2-D SoftFlow with the continuous backend.
    #[serde(rename = "cnf-2d")]
    Cnf2d,
    #[serde(rename = "softpointflow")]
    SoftPointFlow,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 3] = [
        ExperimentKind::SoftFlow2d,
        ExperimentKind::Cnf2d,
        ExperimentKind::SoftPointFlow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SoftFlow2d => "softflow-2d",
            ExperimentKind::Cnf2d => "cnf-2d",
            ExperimentKind::SoftPointFlow => "softpointflow",
        }
    }

    pub fn is_2d(self) -> bool {
        self != ExperimentKind::SoftPointFlow
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("kind", format!("unknown experiment kind `{s}`")))
    }
}

/// Everything needed to reproduce a training run. Stored as TOML in the
/// output directory and embedded in every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Total optimizer steps.
    pub steps: u64,
    /// Steps between intermediate checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
    pub out_dir: PathBuf,
    /// Used by the 2-D kinds.
    pub toy: SoftFlowConfig,
    /// Used by `softpointflow`.
    pub point: PointFlowConfig,
}

impl RunConfig {
    /// Defaults for `kind`. The 2-D kinds use batch 128, Adam at 1e-3 and
    /// noise `c ~ U[0, 0.1]`, `c_in = 20 c`; they train 36 000 steps with
    /// the CNF backend and 100 000 with the discrete one. The
    /// point-set kind uses a desk-scale model with `c ~ U[0, 0.075]`
    /// scaled so the largest condition is 2.
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let toy = SoftFlowConfig {
            backend: match kind {
                ExperimentKind::Cnf2d => BackendConfig::cnf(),
                _ => BackendConfig::discrete(),
            },
            ..SoftFlowConfig::default()
        };
        let (steps, checkpoint_every) = match kind {
            ExperimentKind::SoftPointFlow => (3000, 500),
            ExperimentKind::Cnf2d => (36_000, 2000),
            ExperimentKind::SoftFlow2d => (100_000, 5000),
        };
        Self {
            kind,
            seed: 0,
            steps,
            checkpoint_every,
            out_dir: PathBuf::from("runs").join(kind.name()),
            toy,
            point: PointFlowConfig::default(),
        }
    }

    /// Parses TOML, filling every missing field from [`RunConfig::for_kind`].
    /// `kind` defaults to `softflow-2d`. A nested table whose `type`
    /// differs from the default's replaces it instead of being merged.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("toml", e.to_string()))?;
        let kind = match user.get("kind") {
            None => ExperimentKind::SoftFlow2d,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(v) => return Err(Error::config("kind", format!("expected a string, got {v}"))),
        };
        let mut table = toml::Table::try_from(Self::for_kind(kind)).map_err(|e| Error::Serde(e.to_string()))?;
        merge(&mut table, user);
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("toml", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_toml_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be positive"));
        }
        match self.kind {
            ExperimentKind::SoftFlow2d if self.toy.backend.is_cnf() => {
                return Err(Error::config("toy.backend", "softflow-2d needs the discrete backend"))
            }
            ExperimentKind::Cnf2d if !self.toy.backend.is_cnf() => {
                return Err(Error::config("toy.backend", "cnf-2d needs the cnf backend"))
            }
            _ => {}
        }
        if self.kind.is_2d() {
            if self.toy.batch < 2 {
                return Err(Error::config("toy.batch", "must be at least 2"));
            }
            if !(self.toy.lr > 0.0) {
                return Err(Error::config("toy.lr", "must be positive"));
            }
            check_schedule("toy.schedule", &self.toy.schedule)?;
        } else {
            self.point.validate()?;
            check_schedule("point.schedule", &self.point.schedule)?;
        }
        Ok(())
    }

    /// The active noise schedule.
    pub fn schedule(&self) -> crate::softflow::NoiseSchedule {
        if self.kind.is_2d() {
            self.toy.schedule
        } else {
            self.point.schedule
        }
    }

    /// `out_dir`, rooted at `$SOFTFLOW_OUT_ROOT` when it is relative and the
    /// variable is set.
    pub fn resolved_out_dir(&self) -> PathBuf {
        resolve_out(&self.out_dir)
    }

    /// `# key=value` lines describing the run, for CSV headers.
    pub fn header(&self) -> Vec<(String, String)> {
        let s = self.schedule();
        let dataset = if self.kind.is_2d() {
            self.toy.dataset.name().to_string()
        } else {
            serde_json::to_string(&self.point.data).unwrap_or_default()
        };
        vec![
            ("kind".into(), self.kind.name().into()),
            ("seed".into(), self.seed.to_string()),
            ("dataset".into(), dataset),
            ("a".into(), s.a.to_string()),
            ("b".into(), s.b.to_string()),
            ("scale".into(), s.scale.to_string()),
            ("ablation".into(), s.is_zero().to_string()),
        ]
    }
}

fn check_schedule(field: &str, s: &crate::softflow::NoiseSchedule) -> Result<()> {
    crate::softflow::NoiseSchedule::new(s.a, s.b, s.scale)
        .map(|_| ())
        .map_err(|e| Error::config(field, e.to_string()))
}

/// Relative paths are joined onto `$SOFTFLOW_OUT_ROOT` when it is set.
pub fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let retyped = o.get("type").is_some_and(|t| Some(t) != b.get("type"));
                if retyped {
                    *b = o;
                } else {
                    merge(b, o);
                }
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::softflow::{NoiseSchedule, ToyDataset};

    #[test]
    fn defaults_round_trip_through_toml() {
        for kind in ExperimentKind::ALL {
            let cfg = RunConfig::for_kind(kind);
            let text = cfg.to_toml().unwrap();
            assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg, "{text}");
        }
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml_str(
            "kind = \"cnf-2d\"\nseed = 7\n[toy]\ndataset = \"circles\"\n[toy.schedule]\na = 0.0\nb = 0.0\nscale = 20.0\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.toy.dataset, ToyDataset::Circles);
        assert_eq!(cfg.toy.backend, BackendConfig::cnf());
        assert_eq!(cfg.toy.batch, 128);
        assert!(cfg.header().contains(&("ablation".into(), "true".into())));
    }

    #[test]
    fn retyped_table_replaces_default() {
        let cfg = RunConfig::from_toml_str(
            "kind = \"softpointflow\"\n[point.data]\ntype = \"family\"\nfamily = \"cross\"\n",
        )
        .unwrap();
        assert_eq!(
            cfg.point.data,
            crate::pointflow::PointData::Family {
                family: crate::pointflow::ShapeFamily::Cross,
                count: 16
            }
        );
    }

    #[test]
    fn bad_fields_are_named() {
        let e = RunConfig::from_toml_str("stepz = 3").unwrap_err().to_string();
        assert!(e.contains("stepz"), "{e}");
        let e = RunConfig::from_toml_str("kind = \"softflow-2d\"\n[toy.backend]\ntype = \"cnf\"\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("toy.backend"), "{e}");
        let e = RunConfig::from_toml_str("steps = 0").unwrap_err().to_string();
        assert!(e.contains("steps"), "{e}");
        let mut cfg = RunConfig::for_kind(ExperimentKind::SoftFlow2d);
        cfg.toy.schedule = NoiseSchedule {
            a: 0.2,
            b: 0.1,
            scale: 1.0,
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("toy.schedule"));
    }
}
