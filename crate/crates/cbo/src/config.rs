//! Flat key = value config files for accuracy profiles and network models.
//!
//! Grammar: one `key = value` pair per line; blank lines and lines starting
//! with `#` are ignored. List values are comma-separated.

use crate::error::{CboError, Result};
use crate::workload::{AccuracyProfile, NetworkModel, Resolution, CONFIDENCE_BINS};
use std::path::Path;

/// Ordered key-value pairs from one file.
#[derive(Debug)]
pub struct KvFile {
    pub pairs: Vec<(String, String)>,
    origin: String,
}

impl KvFile {
    pub fn parse(text: &str, origin: &str) -> Result<KvFile> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CboError::Parse {
                    path: origin.to_string(),
                    line: i + 1,
                    field: "line".to_string(),
                    message: format!("expected 'key = value', got {line:?}"),
                });
            };
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(KvFile {
            pairs,
            origin: origin.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<KvFile> {
        let text = std::fs::read_to_string(path)?;
        KvFile::parse(&text, &path.display().to_string())
    }

    fn missing(&self, key: &str) -> CboError {
        CboError::Parse {
            path: self.origin.clone(),
            line: 0,
            field: key.to_string(),
            message: "missing key".to_string(),
        }
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| self.missing(key))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)?.parse::<f64>().map_err(|e| CboError::Parse {
            path: self.origin.clone(),
            line: 0,
            field: key.to_string(),
            message: e.to_string(),
        })
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.get(key)?
            .split(',')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|e| CboError::Parse {
                    path: self.origin.clone(),
                    line: 0,
                    field: key.to_string(),
                    message: e.to_string(),
                })
            })
            .collect()
    }
}

pub fn profile_to_text(profile: &AccuracyProfile) -> String {
    let mut out = String::from("# accuracy profile\n");
    out.push_str(&format!(
        "resolutions = {}\n",
        profile
            .resolutions
            .iter()
            .map(Resolution::label)
            .collect::<Vec<_>>()
            .join(",")
    ));
    out.push_str(&format!(
        "npu_accuracy_bins = {}\n",
        join_f64(&profile.npu_accuracy_bins)
    ));
    out.push_str(&format!(
        "server_accuracy = {}\n",
        join_f64(&profile.server_accuracy)
    ));
    out
}

pub fn profile_from_text(text: &str, origin: &str) -> Result<AccuracyProfile> {
    let kv = KvFile::parse(text, origin)?;
    let resolutions = kv
        .get("resolutions")?
        .split(',')
        .map(|t| Resolution::parse(t.trim()))
        .collect::<Result<Vec<_>>>()?;
    let bins = kv.get_f64_list("npu_accuracy_bins")?;
    if bins.len() != CONFIDENCE_BINS {
        return Err(CboError::invalid(format!(
            "npu_accuracy_bins needs {CONFIDENCE_BINS} values, got {}",
            bins.len()
        )));
    }
    let mut npu_accuracy_bins = [0.0; CONFIDENCE_BINS];
    npu_accuracy_bins.copy_from_slice(&bins);
    let profile = AccuracyProfile {
        resolutions,
        npu_accuracy_bins,
        server_accuracy: kv.get_f64_list("server_accuracy")?,
    };
    profile.validate()?;
    Ok(profile)
}

pub fn save_profile(profile: &AccuracyProfile, path: &Path) -> Result<()> {
    profile.validate()?;
    std::fs::write(path, profile_to_text(profile))?;
    Ok(())
}

pub fn load_profile(path: &Path) -> Result<AccuracyProfile> {
    let text = std::fs::read_to_string(path)?;
    profile_from_text(&text, &path.display().to_string())
}

/// Network files use the CLI units: Mbps and milliseconds.
pub fn network_to_text(net: &NetworkModel) -> String {
    format!(
        "# network model\nbandwidth_mbps = {}\nlatency_ms = {}\nserver_time_ms = {}\n",
        net.bandwidth_bps / 1e6,
        net.latency_s * 1e3,
        net.server_time_s * 1e3,
    )
}

pub fn network_from_text(text: &str, origin: &str) -> Result<NetworkModel> {
    let kv = KvFile::parse(text, origin)?;
    let net = NetworkModel {
        bandwidth_bps: kv.get_f64("bandwidth_mbps")? * 1e6,
        latency_s: kv.get_f64("latency_ms")? / 1e3,
        server_time_s: kv.get_f64("server_time_ms")? / 1e3,
    };
    net.validate()?;
    Ok(net)
}

pub fn save_network(net: &NetworkModel, path: &Path) -> Result<()> {
    net.validate()?;
    std::fs::write(path, network_to_text(net))?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<NetworkModel> {
    let text = std::fs::read_to_string(path)?;
    network_from_text(&text, &path.display().to_string())
}

pub fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_round_trips() {
        let p = AccuracyProfile::default_synthetic();
        let text = profile_to_text(&p);
        let back = profile_from_text(&text, "mem").unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn network_round_trips() {
        let n = NetworkModel::default();
        let back = network_from_text(&network_to_text(&n), "mem").unwrap();
        assert_eq!(n, back);
    }

    #[test]
    fn missing_key_is_an_error() {
        let e = network_from_text("bandwidth_mbps = 5\n", "net.cfg").unwrap_err();
        assert!(e.to_string().contains("latency_ms"), "{e}");
    }

    #[test]
    fn malformed_line_names_the_line() {
        let e = KvFile::parse("a = 1\nnonsense\n", "f.cfg").unwrap_err();
        assert!(e.to_string().contains("f.cfg:2"), "{e}");
    }

    #[test]
    fn profile_validation_catches_decreasing_server_accuracy() {
        let mut p = AccuracyProfile::default_synthetic();
        p.server_accuracy[4] = 0.1;
        let text = profile_to_text(&p);
        assert!(profile_from_text(&text, "mem").is_err());
    }
}
