//! Flat `key = value` run configuration with flag overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Keys are matched with `_` and `-` treated alike.
pub fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

/// Parses `key = value` lines. Blank lines and `#` comments are ignored.
pub fn parse_kv(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: "expected `key = value`".into(),
            });
        };
        let key = normalize_key(key);
        if key.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: "empty key".into(),
            });
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(out)
}

pub fn load_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::MissingFile {
        path: path.to_path_buf(),
        source,
    })?;
    parse_kv(&text, path)
}

/// Resolved settings for one subcommand.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: String,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Layers `flags` over `file`, rejecting keys outside `allowed`.
    pub fn resolve(
        command: &str,
        allowed: &[&str],
        file: BTreeMap<String, String>,
        flags: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (k, v) in file.into_iter().chain(flags) {
            let k = normalize_key(&k);
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key `{k}` for `{command}`")));
            }
            values.insert(k, v);
        }
        Ok(Self {
            command: command.to_string(),
            values,
        })
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("{key} = `{v}`: {e}")))
            })
            .transpose()
    }

    /// Reads `key`, recording `default` in the resolved settings when absent.
    pub fn get<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.opt(key)? {
            Some(v) => Ok(v),
            None => {
                self.set(key, &default);
                Ok(default)
            }
        }
    }

    pub fn req<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.opt(key)?
            .ok_or_else(|| Error::Config(format!("`{}` requires `{key}`", self.command)))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.req(key)
    }

    pub fn opt_path(&self, key: &str) -> Result<Option<PathBuf>> {
        self.opt(key)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# {}\n", self.command);
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Writes `<output>.config` beside an output file.
    pub fn write_beside(&self, output: &Path) -> Result<PathBuf> {
        let mut name = output.as_os_str().to_owned();
        name.push(".config");
        let p = PathBuf::from(name);
        std::fs::write(&p, self.to_text())?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let file = parse_kv("# run\nepochs = 5\nlr_final=0.1 # decay\n\n", Path::new("c")).unwrap();
        let flags = BTreeMap::from([("epochs".to_string(), "7".to_string())]);
        let mut c = RunConfig::resolve("train-adv", &["epochs", "lr-final", "lr"], file, flags).unwrap();
        assert_eq!(c.req::<usize>("epochs").unwrap(), 7);
        assert_eq!(c.req::<f64>("lr-final").unwrap(), 0.1);
        assert_eq!(c.get("lr", 1e-4).unwrap(), 1e-4);
        assert_eq!(c.to_text(), "# train-adv\nepochs = 7\nlr = 0.0001\nlr-final = 0.1\n");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_kv("nonsense", Path::new("c")).is_err());
        assert!(parse_kv("a=1\na=2", Path::new("c")).is_err());
        let file = BTreeMap::from([("bogus".to_string(), "1".to_string())]);
        assert!(matches!(RunConfig::resolve("x", &["a"], file, BTreeMap::new()), Err(Error::Config(_))));
        let c = RunConfig::resolve("x", &["a"], BTreeMap::from([("a".into(), "zz".into())]), BTreeMap::new()).unwrap();
        assert!(matches!(c.req::<f64>("a"), Err(Error::Config(_))));
        assert!(matches!(c.req::<f64>("b"), Err(Error::Config(_))));
    }
}
