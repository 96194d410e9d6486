//! Run manifests: `key=value` text written next to every artifact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

#[derive(Debug)]
pub struct RunManifest {
    pub command: &'static str,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<(&'static str, PathBuf)>,
    pub output: PathBuf,
    /// Resolved configuration, every default materialized.
    pub config: String,
    pub started: String,
}

impl RunManifest {
    pub fn render(&self, finished: &str) -> String {
        let mut out = String::from("# biasguard run manifest\n");
        let _ = writeln!(out, "command={}", self.command);
        let _ = writeln!(out, "engine_version={ENGINE_VERSION}");
        let _ = writeln!(out, "argv={}", self.argv.join(" "));
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "seed={seed}");
        }
        for (name, path) in &self.inputs {
            let _ = writeln!(out, "input.{name}={}", path.display());
        }
        let _ = writeln!(out, "output={}", self.output.display());
        let _ = writeln!(out, "started={}", self.started);
        let _ = writeln!(out, "finished={finished}");
        for line in self.config.lines() {
            let _ = writeln!(out, "config.{line}");
        }
        out
    }

    pub fn write(&self) -> std::io::Result<PathBuf> {
        let path = manifest_path(&self.output);
        fs::write(&path, self.render(&now()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_config_under_a_prefix() {
        let m = RunManifest {
            command: "train",
            argv: vec!["train".into(), "--seed".into(), "3".into()],
            seed: Some(3),
            inputs: vec![("data", PathBuf::from("d.bin"))],
            output: PathBuf::from("ck.bgcp"),
            config: "epochs=2\nlr=0.001\n".into(),
            started: "t0".into(),
        };
        let text = m.render("t1");
        assert!(text.contains("\nconfig.epochs=2\n"));
        assert!(text.contains("\ninput.data=d.bin\n"));
        assert!(text.contains("\nfinished=t1\n"));
        assert_eq!(manifest_path(Path::new("a/ck.bgcp")), PathBuf::from("a/ck.bgcp.manifest"));
    }
}
