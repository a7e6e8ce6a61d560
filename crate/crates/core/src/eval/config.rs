//! Line-oriented `key = value` configuration files.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::query::QueryParams;

/// Keys that override [`QueryParams`] fields.
pub const QUERY_KEYS: &[&str] = &[
    "ma_sift",
    "ma_color",
    "kappa_color",
    "sigma_color",
    "tau_sift",
    "sigma_sift",
    "enable_sift_he",
    "enable_color_he",
    "enable_burst",
    "log_idf",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
    /// Relative paths resolve against this directory.
    base_dir: Option<PathBuf>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{k}`",
                    n + 1
                )));
            }
        }
        Ok(Config {
            values,
            base_dir: None,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let mut c = Self::parse(&fs::read_to_string(path)?)?;
        c.base_dir = path.parent().map(Path::to_path_buf);
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// A path value, resolved against the config file's directory.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|v| {
            let p = PathBuf::from(v);
            match &self.base_dir {
                Some(base) if p.is_relative() => base.join(p),
                _ => p,
            }
        })
    }

    /// Like [`Config::path`] but the file must exist.
    pub fn existing_path(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.path(key) {
            Some(p) if !p.exists() => Err(Error::MissingInput(p)),
            other => Ok(other),
        }
    }

    /// Rejects keys outside `allowed` and [`QUERY_KEYS`].
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.keys() {
            if !allowed.contains(&k) && !QUERY_KEYS.contains(&k) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }

    /// Applies any query keys present on top of `base`.
    pub fn query_params(&self, base: QueryParams) -> Result<QueryParams> {
        Ok(QueryParams {
            ma_sift: self.get_or("ma_sift", base.ma_sift)?,
            ma_color: self.get_or("ma_color", base.ma_color)?,
            kappa_color: self.get_or("kappa_color", base.kappa_color)?,
            sigma_color: self.get_or("sigma_color", base.sigma_color)?,
            tau_sift: self.get_or("tau_sift", base.tau_sift)?,
            sigma_sift: self.get_or("sigma_sift", base.sigma_sift)?,
            enable_sift_he: self.get_or("enable_sift_he", base.enable_sift_he)?,
            enable_color_he: self.get_or("enable_color_he", base.enable_color_he)?,
            enable_burst: self.get_or("enable_burst", base.enable_burst)?,
            log_idf: self.get_or("log_idf", base.log_idf)?,
        })
    }
}

/// Renders query parameters in the same `key = value` form.
pub fn params_to_text(p: &QueryParams) -> String {
    format!(
        "ma_sift = {}\nma_color = {}\nkappa_color = {}\nsigma_color = {}\ntau_sift = {}\nsigma_sift = {}\n\
         enable_sift_he = {}\nenable_color_he = {}\nenable_burst = {}\nlog_idf = {}\n",
        p.ma_sift,
        p.ma_color,
        p.kappa_color,
        p.sigma_color,
        p.tau_sift,
        p.sigma_sift,
        p.enable_sift_he,
        p.enable_color_he,
        p.enable_burst,
        p.log_idf
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let c = Config::parse(
            "# comment\nma_sift = 1\n\nenable_burst=false  # trailing\nindex = a/b.cmix\n",
        )
        .unwrap();
        let p = c.query_params(QueryParams::default()).unwrap();
        assert_eq!(p.ma_sift, 1);
        assert!(!p.enable_burst);
        assert_eq!(p.ma_color, 100);
        assert_eq!(c.path("index"), Some(PathBuf::from("a/b.cmix")));
        assert!(c.check_keys(&["index"]).is_ok());
        assert!(c.check_keys(&[]).is_err());
    }

    #[test]
    fn rejects_malformed() {
        assert!(Config::parse("ma_sift 3").is_err());
        assert!(Config::parse("= 3").is_err());
        assert!(Config::parse("a = 1\na = 2").is_err());
        let c = Config::parse("ma_sift = three").unwrap();
        assert!(matches!(
            c.query_params(QueryParams::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn params_text_round_trip() {
        let p = QueryParams {
            sigma_color: 2.5,
            enable_sift_he: false,
            ..QueryParams::for_color_codebook(9)
        };
        let back = Config::parse(&params_to_text(&p))
            .unwrap()
            .query_params(QueryParams::default())
            .unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn missing_paths_reported() {
        let c = Config::parse("corpus = /nonexistent/x.cmid").unwrap();
        match c.existing_path("corpus") {
            Err(Error::MissingInput(p)) => assert_eq!(p, PathBuf::from("/nonexistent/x.cmid")),
            other => panic!("{other:?}"),
        }
    }
}
