use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const DEFAULT_MODEL: &str = include_str!("../../data/filter_model.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioReply {
    One(String),
    /// Reply per repair round; the last entry repeats.
    Rounds(Vec<String>),
}

/// Canned replies for the scripted backend, keyed by scenario key.
///
/// A key may be scoped to one agent as `agent::key`, and to one group member
/// as `key#i`. Lookup tries the most specific form first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(default)]
    pub description: String,
    pub responses: BTreeMap<String, ScenarioReply>,
}

impl ScenarioFile {
    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn lookup(&self, agent: &str, key: &str, member: Option<usize>, round: u32) -> Option<&str> {
        let mut candidates = Vec::new();
        if let Some(m) = member {
            candidates.push(format!("{agent}::{key}#{m}"));
            candidates.push(format!("{key}#{m}"));
        }
        candidates.push(format!("{agent}::{key}"));
        candidates.push(key.to_string());
        let reply = candidates.iter().find_map(|k| self.responses.get(k))?;
        match reply {
            ScenarioReply::One(text) => Some(text),
            ScenarioReply::Rounds(texts) => texts
                .get((round as usize).min(texts.len().saturating_sub(1)))
                .map(String::as_str),
        }
    }
}

/// Verifier error model with per-item hardness. Each item is "hard" with
/// probability `hard_fraction`; its error probability is then `p_hard`,
/// otherwise `p_easy`. Checks on the same item share that probability, so
/// unanimous agreement of k checks filters errors sub-exponentially.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticErrorModel {
    pub base_correct_prob: f64,
    pub hard_fraction: f64,
    pub p_hard: f64,
    pub p_easy: f64,
    pub seed: u64,
}

impl Default for StochasticErrorModel {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_MODEL).expect("bundled error model is valid")
    }
}

impl StochasticErrorModel {
    /// A model that never errs.
    pub fn perfect(seed: u64) -> Self {
        StochasticErrorModel {
            base_correct_prob: 1.0,
            hard_fraction: 0.0,
            p_hard: 0.0,
            p_easy: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.base_correct_prob > 0.0 && self.base_correct_prob <= 1.0) {
            return Err(format!("base_correct_prob {} not in (0, 1]", self.base_correct_prob));
        }
        for (name, v) in [
            ("hard_fraction", self.hard_fraction),
            ("p_hard", self.p_hard),
            ("p_easy", self.p_easy),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} {v} not in [0, 1]"));
            }
        }
        Ok(())
    }

    fn rng(&self, item_key: &str) -> ChaCha8Rng {
        let digest = Sha256::digest(format!("{}:{item_key}", self.seed).as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    pub fn is_hard(&self, item_key: &str) -> bool {
        self.rng(item_key).random::<f64>() < self.hard_fraction
    }

    pub fn item_error_prob(&self, item_key: &str) -> f64 {
        if self.is_hard(item_key) {
            self.p_hard
        } else {
            self.p_easy
        }
    }

    /// Whether check number `member` on this item reports "equivalent".
    /// Ground-truth negatives slip through with the item's error
    /// probability; positives pass with `base_correct_prob * (1 - p)`.
    pub fn check_passes(&self, item_key: &str, ground_truth_positive: bool, member: u64) -> bool {
        let p = self.item_error_prob(item_key);
        let mut rng = self.rng(item_key);
        rng.set_stream(member + 1);
        let u = rng.random::<f64>();
        if ground_truth_positive {
            u < self.base_correct_prob * (1.0 - p)
        } else {
            u < p
        }
    }

    /// Expected false-positive rate and precision of a unanimous k-check
    /// filter at the given label balance.
    pub fn expected_stats(&self, k: u32, gtp_fraction: f64) -> (f64, f64) {
        let k = k as i32;
        let mix = |f: &dyn Fn(f64) -> f64| {
            self.hard_fraction * f(self.p_hard) + (1.0 - self.hard_fraction) * f(self.p_easy)
        };
        let fpr = mix(&|p| p.powi(k));
        let tpr = mix(&|p| (self.base_correct_prob * (1.0 - p)).powi(k));
        let tp = gtp_fraction * tpr;
        let fp = (1.0 - gtp_fraction) * fpr;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { f64::NAN };
        (fpr * 100.0, precision * 100.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_lookup_precedence() {
        let s = ScenarioFile::from_json_str(
            r#"{"responses":{"k":"base","k#1":"member","a::k":"scoped","r":["first","second"]}}"#,
        )
        .unwrap();
        assert_eq!(s.lookup("a", "k", None, 0), Some("scoped"));
        assert_eq!(s.lookup("b", "k", Some(1), 0), Some("member"));
        assert_eq!(s.lookup("b", "k", Some(2), 0), Some("base"));
        assert_eq!(s.lookup("b", "r", None, 1), Some("second"));
        assert_eq!(s.lookup("b", "r", None, 7), Some("second"));
        assert_eq!(s.lookup("b", "missing", None, 0), None);
    }

    #[test]
    fn shipped_model_expectations() {
        let m = StochasticErrorModel::default();
        m.validate().unwrap();
        let (fp1, p1) = m.expected_stats(1, 0.4);
        let (fp5, p5) = m.expected_stats(5, 0.4);
        assert!((fp1 - 7.36).abs() < 0.1, "{fp1}");
        assert!((p1 - 88.8).abs() < 0.5, "{p1}");
        assert!(fp5 < 0.1 && p5 > 99.5, "{fp5} {p5}");
    }

    #[test]
    fn draws_are_reproducible() {
        let m = StochasticErrorModel::default();
        let a: Vec<bool> = (0..20).map(|i| m.check_passes("item-3", false, i)).collect();
        let b: Vec<bool> = (0..20).map(|i| m.check_passes("item-3", false, i)).collect();
        assert_eq!(a, b);
        assert!((0..20).all(|i| StochasticErrorModel::perfect(1).check_passes("x", true, i)));
    }
}
