//! Config-file and flag resolution. Files hold `key=value` lines; flags are
//! applied after the file, so they win.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use biasguard::data::SynthConfig;
use biasguard::pipeline::TrainConfig;
use biasguard::ModelConfig;

use crate::failure::{usage, Failure};

/// Ordered `(key, value)` entries, file first.
#[derive(Debug, Default)]
pub struct Entries(pub Vec<(String, String)>);

impl Entries {
    pub fn from_file(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config `{}`: {e}", path.display())))?;
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Failure::Usage(format!(
                    "{}:{}: expected key=value, found `{line}`",
                    path.display(),
                    i + 1
                ))
            })?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self(out))
    }

    pub fn push(&mut self, key: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.0.push((key.to_string(), v.to_string()));
        }
    }

    /// `key=value` strings from repeated `--set` flags.
    pub fn extend_assignments(&mut self, sets: &[String]) -> Result<(), Failure> {
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--set expects key=value, got `{s}`")))?;
            self.0.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(())
    }

    fn keys(&self) -> BTreeSet<&str> {
        self.0.iter().map(|(k, _)| k.as_str()).collect()
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, Failure> {
    value
        .parse()
        .map_err(|_| Failure::Usage(format!("`{key}`: cannot parse `{value}`")))
}

pub const SYNTH_KEYS: &[&str] = &[
    "classes",
    "unseen",
    "per_class",
    "d_visual",
    "k_semantic",
    "bias",
    "cluster_scale",
    "anisotropy",
    "test_fraction",
    "seed",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSettings {
    pub synth: SynthConfig,
    pub test_fraction: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            test_fraction: 0.2,
        }
    }
}

impl SynthSettings {
    pub fn resolve(entries: &Entries) -> Result<Self, Failure> {
        let mut s = Self::default();
        for (k, v) in &entries.0 {
            let c = &mut s.synth;
            match k.as_str() {
                "classes" => c.n_classes = parse(k, v)?,
                "unseen" => c.n_unseen = parse(k, v)?,
                "per_class" => c.samples_per_class = parse(k, v)?,
                "d_visual" => c.d_visual = parse(k, v)?,
                "k_semantic" => c.k_semantic = parse(k, v)?,
                "bias" => c.bias_shift = parse(k, v)?,
                "cluster_scale" => c.cluster_scale = parse(k, v)?,
                "anisotropy" => c.anisotropy = parse(k, v)?,
                "test_fraction" => s.test_fraction = parse(k, v)?,
                "seed" => c.seed = parse(k, v)?,
                _ => {
                    return Err(Failure::Usage(format!(
                        "unknown synth key `{k}` (known: {})",
                        SYNTH_KEYS.join(", ")
                    )))
                }
            }
        }
        s.synth.validate().map_err(usage)?;
        if !(s.test_fraction > 0.0 && s.test_fraction < 1.0) {
            return Err(Failure::Usage("test_fraction must lie in (0, 1)".into()));
        }
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let c = &self.synth;
        let values = [
            c.n_classes.to_string(),
            c.n_unseen.to_string(),
            c.samples_per_class.to_string(),
            c.d_visual.to_string(),
            c.k_semantic.to_string(),
            c.bias_shift.to_string(),
            c.cluster_scale.to_string(),
            c.anisotropy.to_string(),
            self.test_fraction.to_string(),
            c.seed.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in SYNTH_KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

const HIDDEN_KEYS: [&str; 5] = [
    "hidden_fusion",
    "hidden_encoder",
    "hidden_generator",
    "hidden_disc_a",
    "hidden_disc_b",
];

/// Training configuration for data of the given widths. Feature widths come
/// from the data unless set explicitly; hidden widths follow the resolved
/// layer widths unless set explicitly.
pub fn resolve_train(entries: &Entries, d_visual: usize, k_semantic: usize) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::default();
    for (k, v) in &entries.0 {
        cfg.set(k, v).map_err(usage)?;
    }
    let keys = entries.keys();
    let pick = |key: &str, explicit: usize, data: usize| if keys.contains(key) { explicit } else { data };
    let m = cfg.model;
    cfg.model = ModelConfig::new(
        pick("d_visual", m.d_visual, d_visual),
        pick("k_semantic", m.k_semantic, k_semantic),
        m.d_latent,
        m.k_proj,
    )
    .with_fusion(m.fusion);
    for (k, v) in entries.0.iter().filter(|(k, _)| HIDDEN_KEYS.contains(&k.as_str())) {
        cfg.set(k, v).map_err(usage)?;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(pairs: &[(&str, &str)]) -> Entries {
        Entries(pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
    }

    #[test]
    fn later_entries_win() {
        let e = entries(&[("epochs", "3"), ("epochs", "5")]);
        assert_eq!(resolve_train(&e, 8, 4).unwrap().epochs, 5);
    }

    #[test]
    fn widths_follow_data_and_latent_size() {
        let cfg = resolve_train(&entries(&[("d_latent", "7")]), 10, 3).unwrap();
        assert_eq!((cfg.model.d_visual, cfg.model.k_semantic), (10, 3));
        assert_eq!(cfg.model.hidden.generator, 14);
        let cfg = resolve_train(&entries(&[("hidden_generator", "5")]), 10, 3).unwrap();
        assert_eq!(cfg.model.hidden.generator, 5);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        assert!(matches!(resolve_train(&entries(&[("lamda_m", "1")]), 8, 4), Err(Failure::Usage(_))));
        assert!(matches!(SynthSettings::resolve(&entries(&[("clases", "4")])), Err(Failure::Usage(_))));
    }

    #[test]
    fn synth_text_resolves_back() {
        let s = SynthSettings::resolve(&entries(&[("bias", "3.5"), ("seed", "4")])).unwrap();
        let text = s.to_text();
        let again: Vec<(String, String)> = text
            .lines()
            .map(|l| {
                let (k, v) = l.split_once('=').unwrap();
                (k.to_string(), v.to_string())
            })
            .collect();
        assert_eq!(SynthSettings::resolve(&Entries(again)).unwrap(), s);
    }
}
