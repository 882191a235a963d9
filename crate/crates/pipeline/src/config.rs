//! Plain-text `key = value` settings. Blank lines and text after `#` are
//! ignored; a key may appear once.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use moe_core::association::DEFAULT_THRESHOLD;
use moe_core::channel::ScenarioConfig;
use moe_neural::loss::{DEFAULT_K1, DEFAULT_K2};
use moe_neural::ArchKind;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: &str| Error::ConfigSyntax {
                line: i + 1,
                message: message.to_string(),
            };
            let (key, value) = line.split_once('=').ok_or_else(|| syntax("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(syntax("empty key"));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(syntax(&format!("duplicate key {key:?}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| Error::setting(key, format!("cannot parse {v:?}"))))
            .transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

pub const KNOWN_KEYS: &[&str] = &[
    "snr_min_db",
    "snr_max_db",
    "samples_per_block",
    "delay_min",
    "delay_max",
    "multipath_power_min_db",
    "multipath_power_max_db",
    "cone_half_angle_deg",
    "max_velocity",
    "carrier_hz",
    "overloaded_fraction",
    "classes",
    "class",
    "records",
    "trials",
    "arch",
    "epochs",
    "batch_size",
    "learning_rate",
    "k1",
    "k2",
    "validation_fraction",
    "threshold",
    "grid_step_deg",
];

/// Every tunable of the command-line tools. Scenario fields left unset in
/// the file keep their per-command defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub snr_db: Option<(f64, f64)>,
    pub scenario: ScenarioConfig,
    /// Forced class for single-scenario runs and DoA evaluation.
    pub class: Option<u8>,
    pub records: usize,
    pub trials: usize,
    pub arch: ArchKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub k1: f64,
    pub k2: f64,
    pub validation_fraction: f64,
    pub threshold: f64,
    pub grid_step_deg: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            snr_db: None,
            scenario: ScenarioConfig::default(),
            class: None,
            records: 10_000,
            trials: 200,
            arch: ArchKind::Rcnn,
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            k1: DEFAULT_K1,
            k2: DEFAULT_K2,
            validation_fraction: 0.1,
            threshold: DEFAULT_THRESHOLD,
            grid_step_deg: 1.0,
        }
    }
}

fn pair(kv: &KeyValues, lo: &str, hi: &str, default: (f64, f64)) -> Result<Option<(f64, f64)>> {
    match (kv.get::<f64>(lo)?, kv.get::<f64>(hi)?) {
        (None, None) => Ok(None),
        (a, b) => Ok(Some((a.unwrap_or(default.0), b.unwrap_or(default.1)))),
    }
}

impl Settings {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            return Err(Error::setting(k, "unknown key"));
        }
        let mut s = Settings::default();
        let sc = &mut s.scenario;
        s.snr_db = pair(kv, "snr_min_db", "snr_max_db", sc.snr_range)?;
        if let Some(r) = pair(kv, "multipath_power_min_db", "multipath_power_max_db", sc.multipath_power_range)? {
            sc.multipath_power_range = r;
        }
        if let Some(v) = kv.get("samples_per_block")? {
            sc.samples_per_block = v;
        }
        let delays = (kv.get::<usize>("delay_min")?, kv.get::<usize>("delay_max")?);
        sc.delay_range = (delays.0.unwrap_or(sc.delay_range.0), delays.1.unwrap_or(sc.delay_range.1));
        if let Some(v) = kv.get::<f64>("cone_half_angle_deg")? {
            sc.cone_half_angle = v.to_radians();
        }
        if let Some(v) = kv.get("max_velocity")? {
            sc.max_velocity = v;
        }
        if let Some(v) = kv.get("carrier_hz")? {
            sc.carrier_hz = v;
        }
        if let Some(v) = kv.get("overloaded_fraction")? {
            sc.overloaded_fraction = v;
        }
        if let Some(list) = kv.raw("classes") {
            sc.classes = parse_classes(list)?;
        }
        s.class = kv.get("class")?;
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = kv.get(stringify!($field))? {
                    s.$field = v;
                }
            )*};
        }
        take!(records, trials, epochs, batch_size, learning_rate, k1, k2, validation_fraction, threshold, grid_step_deg);
        if let Some(a) = kv.raw("arch") {
            s.arch = match a {
                "rcnn" => ArchKind::Rcnn,
                "mlp" => ArchKind::Mlp,
                other => return Err(Error::setting("arch", format!("unknown architecture {other:?}"))),
            };
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_key_values(&KeyValues::load(p)?),
            None => Ok(Self::default()),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::setting("validation_fraction", "must lie in [0, 1)"));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::setting("threshold", "must lie in (0, 1]"));
        }
        if self.records == 0 || self.trials == 0 {
            return Err(Error::setting("records/trials", "must be positive"));
        }
        if let Some(c) = self.class {
            if !(1..=19).contains(&c) {
                return Err(Error::setting("class", format!("{c} is not in 1..=19")));
            }
        }
        Ok(())
    }

    /// Scenario configuration with the SNR interval set, falling back to
    /// `default_snr` when the file does not give one.
    pub fn scenario_with_snr(&self, default_snr: (f64, f64)) -> ScenarioConfig {
        ScenarioConfig {
            snr_range: self.snr_db.unwrap_or(default_snr),
            ..self.scenario.clone()
        }
    }
}

/// Comma-separated classes with optional `a-b` ranges.
fn parse_classes(list: &str) -> Result<Vec<u8>> {
    let bad = || Error::setting("classes", format!("cannot parse {list:?}"));
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u8, u8) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}
