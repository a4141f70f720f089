use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::selftrain::SelfTrainConfig;
use crate::dpc::DpcConfig;
use crate::edf::EdfConfig;
use crate::losses::LossConfig;
use crate::{Error, Result};

/// Whole-toolkit configuration. Every section is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub edf: EdfConfig,
    pub dpc: DpcConfig,
    pub loss: LossConfig,
    pub selftrain: SelfTrainConfig,
}

impl Config {
    /// Reads TOML, or JSON when the file ends in `.json`. Relative paths in
    /// the `selftrain` section are taken relative to the config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg: Config = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let st = &mut self.selftrain;
        let fix = |p: &mut std::path::PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut st.work_dir);
        fix(&mut st.manifest);
        if let Some(d) = st.gt_dir.as_mut() {
            fix(d);
        }
        use super::selftrain::SegmenterSpec;
        for spec in [&mut st.plain, &mut st.promptable] {
            match spec {
                SegmenterSpec::MockNoisy(c) => fix(&mut c.gt_dir),
                SegmenterSpec::MockPromptRefine(c) => fix(&mut c.gt_dir),
                _ => {}
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.edf.validate()?;
        self.dpc.validate()?;
        self.loss.validate()?;
        self.selftrain.policy.validate()
    }
}
