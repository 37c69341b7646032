//! The run configuration file and `--set key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cenet::CENetConfig;
use crate::error::{Error, Result};
use crate::prnet::PRNetConfig;
use crate::trainer::{TrainConfig, Variant};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_ROOT_ENV: &str = "COLORENH_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Manifest written by `colorenh ingest`. Relative paths are resolved
    /// against the config file's directory.
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub variant: Variant,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub cenet: CENetConfig,
    pub prnet: PRNetConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs"),
            variant: Variant::CePrnl,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            cenet: CENetConfig::default(),
            prnet: PRNetConfig::default(),
        }
    }
}

fn parse_override(item: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!(
            "override {item:?} has an empty key segment"
        )));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for seg in parents {
        let entry = cur
            .entry(seg.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("cannot set a key below non-table {seg:?}")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text, applies overrides, and rejects unknown keys.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        for item in overrides {
            let (path, value) = parse_override(item)?;
            apply_override(&mut table, &path, value)?;
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.train.validate()?;
        config.prnet.validate()?;
        Ok(config)
    }

    /// Loads a config file. Relative manifest and output paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text, overrides)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(m) = &config.data.manifest {
            if m.is_relative() {
                config.data.manifest = Some(base.join(m));
            }
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 12 hex digits of the SHA-256 of the serialized config.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// `output_dir`, unless the environment overrides it.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.data
            .manifest
            .as_deref()
            .ok_or_else(|| Error::Config("data.manifest is not set".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_full_scale_defaults() {
        let c = RunConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train.lr_initial, 0.01);
        assert_eq!(c.prnet.base_channels, 16);
    }

    #[test]
    fn unknown_keys_are_named() {
        for text in [
            "learningrate = 0.1",
            "[train]\nlearningrate = 0.1",
            "[prnet]\nblocks = 2",
        ] {
            let err = RunConfig::from_toml_str(text, &[]).unwrap_err();
            assert!(matches!(err, Error::Config(_)));
            let msg = err.to_string();
            assert!(
                msg.contains("learningrate") || msg.contains("blocks"),
                "{msg}"
            );
        }
        let err = RunConfig::from_toml_str("", &["train.learningrate=1".into()]).unwrap_err();
        assert!(err.to_string().contains("learningrate"));
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::from_toml_str(
            "variant = \"CE\"\n[train]\nbatch_size = 4\n",
            &[
                "train.batch_size=2".into(),
                "variant=PR".into(),
                "prnet.nonlocal_position=\"end\"".into(),
                "train.max_steps=10".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.train.batch_size, 2);
        assert_eq!(c.variant, Variant::Pr);
        assert_eq!(
            c.prnet.nonlocal_position,
            crate::prnet::NonLocalPosition::End
        );
        assert_eq!(c.train.max_steps, Some(10));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 12);
        let back = RunConfig::from_toml_str(&a.to_toml(), &[]).unwrap();
        assert_eq!(back, a);
    }
}
