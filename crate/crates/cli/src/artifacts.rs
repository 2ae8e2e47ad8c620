use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path};

use nonresp_core::impute::{DEFAULT_BURN_IN, DEFAULT_PMM_DONORS};
use nonresp_core::logit::{STAR_ONE, STAR_TWO};
use nonresp_core::rng::fingerprint;
use nonresp_core::{Error, Result};
use toml::{Table, Value};

/// Output files held in memory until the command has fully succeeded.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: BTreeMap<String, String>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<String>, body: impl Into<String>) {
        self.files.insert(name.into(), body.into());
    }

    /// Writes every file plus `manifest.toml` below `out`.
    pub fn write(mut self, out: &Path, mut manifest: Manifest) -> Result<()> {
        for (name, body) in &self.files {
            manifest.output(name, body);
        }
        self.files.insert("manifest.toml".into(), manifest.render());
        for name in self.files.keys() {
            let rel = Path::new(name);
            if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
                return Err(Error::Config(format!("output name `{name}` escapes the output directory")));
            }
        }
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        for (name, body) in &self.files {
            let path = out.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Run record: settings, input digests, decision defaults, output digests.
/// Contains no paths or timestamps, so identical runs give identical bytes.
#[derive(Debug)]
pub struct Manifest {
    command: String,
    settings: Table,
    inputs: Table,
    decisions: Table,
    outputs: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut decisions = Table::new();
        decisions.insert("star_one_p".into(), Value::Float(STAR_ONE));
        decisions.insert("star_two_p".into(), Value::Float(STAR_TWO));
        decisions.insert("default_burn_in".into(), Value::Integer(DEFAULT_BURN_IN as i64));
        decisions.insert("pmm_donors".into(), Value::Integer(DEFAULT_PMM_DONORS as i64));
        decisions.insert("model_prior".into(), "uniform".into());
        decisions.insert("ma_variance".into(), "buckland-1997".into());
        decisions.insert("ame_rows".into(), "complete-cases".into());
        decisions.insert("small_pattern_merge".into(), "fewer than k+1 rows, nearest larger pattern".into());
        decisions.insert(
            "seed_scheme".into(),
            "chacha8(splitmix64(seed ^ fnv1a(label) ^ splitmix64(index)))".into(),
        );
        Manifest {
            command: command.to_string(),
            settings: Table::new(),
            inputs: Table::new(),
            decisions,
            outputs: Vec::new(),
        }
    }

    pub fn setting(&mut self, key: &str, value: impl Into<Value>) {
        self.settings.insert(key.into(), value.into());
    }

    pub fn input(&mut self, key: &str, contents: &str) {
        self.inputs.insert(key.into(), fingerprint(contents).into());
    }

    fn output(&mut self, name: &str, body: &str) {
        self.outputs.push((name.to_string(), fingerprint(body)));
    }

    pub fn render(&self) -> String {
        let mut root = Table::new();
        root.insert("tool".into(), "nonresp".into());
        root.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        root.insert("command".into(), self.command.clone().into());
        let digest_src = format!("{}\n{}\n{}", self.command, self.settings, self.inputs);
        root.insert("config_hash".into(), fingerprint(&digest_src).into());
        root.insert("settings".into(), Value::Table(self.settings.clone()));
        root.insert("inputs".into(), Value::Table(self.inputs.clone()));
        root.insert("decisions".into(), Value::Table(self.decisions.clone()));
        let outputs: Table = self
            .outputs
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        root.insert("outputs".into(), Value::Table(outputs));
        toml::to_string(&root).expect("manifest serializes")
    }
}
