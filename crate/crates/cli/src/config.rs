//! Flat `key=value` settings: built-in defaults, then an optional file, then
//! command-line flags, each layer overriding the previous one.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Value meaning "derive from the other settings".
pub const AUTO: &str = "auto";

#[derive(Clone, Debug)]
pub struct Settings {
    keys: &'static [&'static str],
    values: BTreeMap<&'static str, String>,
}

fn canonical(keys: &'static [&'static str], key: &str) -> Option<&'static str> {
    let key = if key == "n_per_task" { "N" } else { key };
    keys.iter().copied().find(|k| *k == key)
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("line {}: expected key=value, got `{line}`", n + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl Settings {
    /// Merges the layers; every key must be one of `keys`.
    pub fn resolve(
        keys: &'static [&'static str],
        defaults: &[(&'static str, String)],
        file: Option<&Path>,
        flags: &[(&'static str, Option<String>)],
    ) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (k, v) in defaults {
            let key = canonical(keys, k).expect("defaults use known keys");
            values.insert(key, v.clone());
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            for (k, v) in parse_pairs(&text)? {
                let key = canonical(keys, &k).ok_or_else(|| {
                    CliError::Config(format!(
                        "{}: unknown key `{k}` (allowed: {})",
                        path.display(),
                        keys.join(", ")
                    ))
                })?;
                values.insert(key, v);
            }
        }
        for (k, v) in flags {
            if let Some(v) = v {
                values.insert(
                    canonical(keys, k).expect("flags use known keys"),
                    v.trim().to_string(),
                );
            }
        }
        Ok(Self { keys, values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.raw(key).ok_or_else(|| {
            CliError::Usage(format!(
                "missing required setting `{key}` (flag --{key} or config file)"
            ))
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|e| CliError::Config(format!("invalid value `{raw}` for `{key}`: {e}")))
    }

    /// `None` when the key is absent or set to [`AUTO`].
    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None | Some(AUTO) => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None | Some("") => Ok(Vec::new()),
            Some(raw) => raw
                .split(',')
                .map(|item| {
                    item.trim().parse().map_err(|e| {
                        CliError::Config(format!("invalid entry `{item}` in `{key}`: {e}"))
                    })
                })
                .collect(),
        }
    }

    /// All set keys in declaration order; parses back to the same settings.
    pub fn to_text(&self) -> String {
        self.keys
            .iter()
            .filter_map(|k| self.values.get(k).map(|v| format!("{k}={v}\n")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEYS: &[&str] = &["a", "b", "N"];

    #[test]
    fn layers_override_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(&path, "# comment\na = 2\n\nn_per_task=7 # trailing\n").unwrap();
        let s = Settings::resolve(
            KEYS,
            &[("a", "1".into()), ("b", "x".into())],
            Some(&path),
            &[("b", Some("y".into())), ("a", None)],
        )
        .unwrap();
        assert_eq!(s.get::<u32>("a").unwrap(), 2);
        assert_eq!(s.raw("b"), Some("y"));
        assert_eq!(s.get::<usize>("N").unwrap(), 7);
        assert_eq!(s.to_text(), "a=2\nb=y\nN=7\n");
        let back = parse_pairs(&s.to_text()).unwrap();
        assert_eq!(back.len(), 3);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(&path, "zzz=1\n").unwrap();
        assert!(matches!(
            Settings::resolve(KEYS, &[], Some(&path), &[]),
            Err(CliError::Config(_))
        ));
        assert!(parse_pairs("novalue\n").is_err());
        assert!(parse_pairs("=3\n").is_err());
    }

    #[test]
    fn typed_access() {
        let s = Settings::resolve(
            KEYS,
            &[("a", "auto".into()), ("b", "1, 2,3".into())],
            None,
            &[],
        )
        .unwrap();
        assert_eq!(s.get_opt::<f64>("a").unwrap(), None);
        assert_eq!(s.get_list::<u8>("b").unwrap(), vec![1, 2, 3]);
        assert!(matches!(s.require("N"), Err(CliError::Usage(_))));
        assert!(s.get::<u8>("a").is_err());
    }
}
