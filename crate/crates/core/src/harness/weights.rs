use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patterns::{ActivationPattern, PatternSet};
use crate::solver::ConvexWeights;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub episodes: usize,
}

/// On-disk form of trained weights. `w1` and `w2` are `P × d`, row-major:
/// row `p` holds the input weights of pattern `p`'s unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub format_version: u32,
    pub d: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub patterns: Vec<String>,
    pub provenance: Provenance,
}

impl WeightsFile {
    pub fn new(w: &ConvexWeights<f64>, patterns: &PatternSet, provenance: Provenance) -> Self {
        let d = w.input_dim();
        let p = w.patterns();
        let half = d * p;
        Self {
            format_version: FORMAT_VERSION,
            d,
            p,
            w1: w.as_slice()[..half].to_vec(),
            w2: w.as_slice()[half..].to_vec(),
            patterns: patterns.iter().map(ActivationPattern::to_bit_string).collect(),
            provenance,
        }
    }

    pub fn weights(&self) -> Result<ConvexWeights<f64>> {
        let mut data = self.w1.clone();
        data.extend_from_slice(&self.w2);
        ConvexWeights::from_flat(self.d, self.p, data)
    }

    pub fn pattern_set(&self) -> Result<PatternSet> {
        let masks = self
            .patterns
            .iter()
            .map(|s| {
                ActivationPattern::from_bit_string(s)
                    .ok_or_else(|| Error::MalformedFile(format!("bad pattern mask {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PatternSet::from_masks_unchecked(masks, String::new(), self.provenance.seed))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::MalformedFile(e.to_string()))?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::VersionMismatch {
                    found: u32::try_from(v).unwrap_or(u32::MAX),
                    expected: FORMAT_VERSION,
                })
            }
            None => return Err(Error::MalformedFile("missing format_version".into())),
        }
        let file: WeightsFile =
            serde_json::from_value(value).map_err(|e| Error::MalformedFile(e.to_string()))?;
        file.check()?;
        Ok(file)
    }

    fn check(&self) -> Result<()> {
        let n = self.d * self.p;
        if self.w1.len() != n || self.w2.len() != n {
            return Err(Error::MalformedFile(format!(
                "expected {n} entries per layer for d={}, P={}; found {} and {}",
                self.d,
                self.p,
                self.w1.len(),
                self.w2.len()
            )));
        }
        if self.patterns.len() != self.p {
            return Err(Error::MalformedFile(format!(
                "expected {} pattern masks, found {}",
                self.p,
                self.patterns.len()
            )));
        }
        if self.w1.iter().chain(&self.w2).any(|v| !v.is_finite()) {
            return Err(Error::MalformedFile("non-finite weight".into()));
        }
        self.pattern_set().map(|_| ())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightsFile {
        let w = ConvexWeights::from_parts(
            &[vec![0.1, -1.0 / 3.0, 1e-300], vec![5.0, 0.0, -0.0]],
            &[vec![f64::MIN_POSITIVE, 2.0f64.sqrt(), 7.0], vec![0.0; 3]],
        )
        .unwrap();
        let ps = PatternSet::from_masks_unchecked(
            vec![
                ActivationPattern::from_bit_string("10110").unwrap(),
                ActivationPattern::from_bit_string("00000").unwrap(),
            ],
            String::new(),
            4,
        );
        WeightsFile::new(
            &w,
            &ps,
            Provenance {
                config_hash: "abc".into(),
                seed: 4,
                episodes: 12,
            },
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let f = sample();
        let back = WeightsFile::from_json(&f.to_json()).unwrap();
        assert_eq!(back, f);
        let a = f.weights().unwrap();
        let b = back.weights().unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn truncated_file_is_malformed() {
        let json = sample().to_json();
        let err = WeightsFile::from_json(&json[..json.len() / 2]).unwrap_err();
        assert_eq!(err.category(), "malformed-file");
    }

    #[test]
    fn version_bump_is_rejected() {
        let json = sample().to_json().replace("\"format_version\": 1", "\"format_version\": 2");
        let err = WeightsFile::from_json(&json).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { found: 2, expected: 1 }));
    }

    #[test]
    fn shape_errors() {
        let mut f = sample();
        f.w2.pop();
        assert!(WeightsFile::from_json(&f.to_json()).is_err());
        let mut f = sample();
        f.patterns[0] = "10x".into();
        assert!(WeightsFile::from_json(&f.to_json()).is_err());
    }
}
