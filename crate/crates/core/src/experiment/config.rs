//! Flat `key=value` configuration shared by config files and CLI flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::rng::RunSeeds;
use crate::trainer::TrainConfig;

/// Everything a single run or a sweep needs. Defaults reproduce the reference
/// experiment: `n = 20, d = 100, |mu| = 5, sigma_p = 1, p = 0.1, m = 10,
/// eta = 0.1`, 100 iterations, 1000 test points.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub d: usize,
    pub n: usize,
    pub mu: f64,
    pub sigma_p: f64,
    pub p: f64,
    pub m: usize,
    pub eta: f64,
    pub iters: usize,
    pub epsilon: f64,
    pub sigma0: f64,
    pub test_count: usize,
    pub seed: u64,
    pub record_every: usize,
    pub out: PathBuf,
    pub workers: usize,
    pub d_values: Vec<usize>,
    pub mu_values: Vec<f64>,
    pub replications: usize,
    pub cutoff: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: 100,
            n: 20,
            mu: 5.0,
            sigma_p: 1.0,
            p: 0.1,
            m: 10,
            eta: 0.1,
            iters: 100,
            epsilon: 1e-6,
            sigma0: 0.01,
            test_count: 1000,
            seed: 42,
            record_every: 1,
            out: PathBuf::from("out"),
            workers: 0,
            d_values: (0..=10).map(|k| 100 + 100 * k).collect(),
            mu_values: (1..=11).map(f64::from).collect(),
            replications: 3,
            cutoff: 0.2,
        }
    }
}

/// Keys accepted in config files; each is also a `--key` flag.
pub const KEYS: &[&str] = &[
    "d",
    "n",
    "mu",
    "sigma-p",
    "p",
    "m",
    "eta",
    "iters",
    "epsilon",
    "sigma0",
    "test-count",
    "seed",
    "record-every",
    "out",
    "workers",
    "d-values",
    "mu-values",
    "replications",
    "cutoff",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

/// Accepts `a,b,c` or an inclusive range `start..end:step`.
fn parse_list<T>(key: &str, value: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr + Copy + PartialOrd + std::ops::Add<Output = T>,
{
    let value = value.trim();
    let items = if let Some((range, step)) = value.split_once(':') {
        let (a, b) = range
            .split_once("..")
            .ok_or_else(|| Error::config(key, "range must look like start..end:step"))?;
        let (start, end, step): (T, T, T) = (parse(key, a)?, parse(key, b)?, parse(key, step)?);
        if !(start + step > start) {
            return Err(Error::config(key, "range step must be positive"));
        }
        let mut out = Vec::new();
        let mut x = start;
        while x <= end {
            out.push(x);
            x = x + step;
        }
        out
    } else {
        value
            .split(',')
            .map(|s| parse(key, s))
            .collect::<Result<Vec<T>>>()?
    };
    if items.is_empty() {
        return Err(Error::config(key, "list is empty"));
    }
    Ok(items)
}

impl RunConfig {
    /// Sets one key. Unknown keys are rejected.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.d = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "mu" => self.mu = parse(key, value)?,
            "sigma-p" => self.sigma_p = parse(key, value)?,
            "p" => self.p = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "iters" => self.iters = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "sigma0" => self.sigma0 = parse(key, value)?,
            "test-count" => self.test_count = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "record-every" => self.record_every = parse(key, value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            "workers" => self.workers = parse(key, value)?,
            "d-values" => self.d_values = parse_list(key, value)?,
            "mu-values" => self.mu_values = parse_list(key, value)?,
            "replications" => self.replications = parse(key, value)?,
            "cutoff" => self.cutoff = parse(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, "expected key=value"))?;
            self.apply(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// The resolved configuration as `key=value` lines, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let mut s = String::new();
        for key in KEYS {
            let value = match *key {
                "d" => self.d.to_string(),
                "n" => self.n.to_string(),
                "mu" => self.mu.to_string(),
                "sigma-p" => self.sigma_p.to_string(),
                "p" => self.p.to_string(),
                "m" => self.m.to_string(),
                "eta" => self.eta.to_string(),
                "iters" => self.iters.to_string(),
                "epsilon" => self.epsilon.to_string(),
                "sigma0" => self.sigma0.to_string(),
                "test-count" => self.test_count.to_string(),
                "seed" => self.seed.to_string(),
                "record-every" => self.record_every.to_string(),
                "out" => self.out.display().to_string(),
                "workers" => self.workers.to_string(),
                "d-values" => join(self.d_values.iter().map(|v| v.to_string()).collect()),
                "mu-values" => join(self.mu_values.iter().map(|v| v.to_string()).collect()),
                "replications" => self.replications.to_string(),
                "cutoff" => self.cutoff.to_string(),
                _ => unreachable!("every key is listed"),
            };
            let _ = writeln!(s, "{key}={value}");
        }
        s
    }

    pub fn seeds(&self) -> RunSeeds {
        RunSeeds::from_master(self.seed)
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            d: self.d,
            n: self.n,
            mu_norm: self.mu,
            sigma_p: self.sigma_p,
            p: self.p,
            seed: self.seeds().data,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            m: self.m,
            eta: self.eta,
            sigma_0: self.sigma0,
            max_iters: self.iters,
            epsilon: self.epsilon,
            record_every: self.record_every,
            init_seed: self.seeds().init,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data_config().validate()?;
        self.train_config().validate()?;
        if self.test_count == 0 {
            return Err(Error::config("test-count", "must be at least 1"));
        }
        if self.replications == 0 {
            return Err(Error::config("replications", "must be at least 1"));
        }
        if !(self.cutoff > 0.0 && self.cutoff < 1.0) {
            return Err(Error::config("cutoff", "must lie in (0, 1)"));
        }
        if self.d_values.contains(&0) {
            return Err(Error::config("d-values", "dimensions must be positive"));
        }
        if self.mu_values.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(Error::config("mu-values", "signal strengths must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_reference_setting() {
        let c = RunConfig::default();
        assert_eq!((c.n, c.d, c.mu, c.sigma_p, c.p, c.m, c.eta, c.iters), (20, 100, 5.0, 1.0, 0.1, 10, 0.1, 100));
        assert_eq!(c.test_count, 1000);
        assert_eq!(c.d_values.first(), Some(&100));
        assert_eq!(c.d_values.last(), Some(&1100));
        assert_eq!(c.mu_values.len(), 11);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nd = 400\nmu=2.5  # trailing\nd-values=100..700:300\nmu-values=1,3.5\n").unwrap();
        assert_eq!(c.d, 400);
        assert_eq!(c.mu, 2.5);
        assert_eq!(c.d_values, vec![100, 400, 700]);
        assert_eq!(c.mu_values, vec![1.0, 3.5]);
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_and_bad_keys() {
        let mut c = RunConfig::default();
        let err = c.apply("sigma_p", "1").unwrap_err();
        assert!(err.to_string().contains("sigma_p"));
        assert!(c.apply("d", "ten").is_err());
        assert!(c.apply_text("d 10").is_err());
        assert!(c.apply("d-values", "100..50:0").is_err());
        c.apply("p", "0.7").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("p"));
    }
}
