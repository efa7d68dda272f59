//! Zero-shot, few-shot and full-shot training splits.
//!
//! Few-shot sampling shuffles the candidate pool (sorted by dialogue id) with
//! a seeded ChaCha8 generator and takes a prefix, so for a fixed seed a
//! smaller fraction always selects a subset of a larger one.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::types::Dialogue;
use crate::error::{Error, Result};

/// Exact fraction in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Fraction(Ratio<u64>);

impl Fraction {
    pub const ONE: Fraction = Fraction(Ratio::new_raw(1, 1));

    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if denom == 0 || numer == 0 || numer > denom {
            return Err(Error::InvalidArgument(format!(
                "fraction {numer}/{denom} is not in (0, 1]"
            )));
        }
        Ok(Fraction(Ratio::new(numer, denom)))
    }

    /// ⌊self × n⌋.
    pub fn floor_of(self, n: usize) -> usize {
        let n = n as u128;
        (n * *self.0.numer() as u128 / *self.0.denom() as u128) as usize
    }

    pub fn is_one(self) -> bool {
        self.0 == Ratio::from_integer(1)
    }

    pub fn as_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

/// Accepts `0.05`, `5%` and `1/20`.
impl FromStr for Fraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidArgument(format!("cannot parse fraction {s:?}"));
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| bad())?;
            let d = d.trim().parse().map_err(|_| bad())?;
            return Fraction::new(n, d);
        }
        let (body, percent) = match s.strip_suffix('%') {
            Some(b) => (b.trim(), true),
            None => (s, false),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 18 {
            return Err(bad());
        }
        let mut denom = 10u64.checked_pow(frac.len() as u32).ok_or_else(bad)?;
        let digits = format!("{int}{frac}");
        let numer: u64 = digits.parse().map_err(|_| bad())?;
        if percent {
            denom = denom.checked_mul(100).ok_or_else(bad)?;
        }
        Fraction::new(numer, denom)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl Serialize for Fraction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    ZeroShot,
    CrossDomainFewShot,
    MultiDomainFewShot,
    FullShot,
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "zero_shot" => Ok(SplitMode::ZeroShot),
            "cross_domain_few_shot" => Ok(SplitMode::CrossDomainFewShot),
            "multi_domain_few_shot" => Ok(SplitMode::MultiDomainFewShot),
            "full_shot" => Ok(SplitMode::FullShot),
            _ => Err(Error::InvalidArgument(format!("unknown split mode {s:?}"))),
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::ZeroShot => "zero_shot",
            SplitMode::CrossDomainFewShot => "cross_domain_few_shot",
            SplitMode::MultiDomainFewShot => "multi_domain_few_shot",
            SplitMode::FullShot => "full_shot",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub target_domain: Option<String>,
    pub fraction: Fraction,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let needs_target = matches!(
            self.mode,
            SplitMode::ZeroShot | SplitMode::CrossDomainFewShot
        );
        match (&self.target_domain, needs_target) {
            (None, true) => {
                return Err(Error::InvalidArgument(format!(
                    "{} requires a target domain",
                    self.mode
                )))
            }
            (Some(_), false) => {
                return Err(Error::InvalidArgument(format!(
                    "{} does not take a target domain",
                    self.mode
                )))
            }
            _ => {}
        }
        let few_shot = matches!(
            self.mode,
            SplitMode::CrossDomainFewShot | SplitMode::MultiDomainFewShot
        );
        if few_shot && self.fraction.is_one() {
            return Err(Error::InvalidArgument(format!(
                "{} requires a fraction below 1",
                self.mode
            )));
        }
        Ok(())
    }
}

/// Provenance of a split, persisted next to the split files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub spec: SplitSpec,
    pub input_dialogues: usize,
    pub pool_size: usize,
    pub sampled: Vec<String>,
    pub train_ids: Vec<String>,
    pub heldout_ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<Dialogue>,
    /// Dialogues not used for training: the target-domain dialogues left out
    /// (zero/cross-domain), the unsampled rest (multi-domain), or nothing.
    pub heldout: Vec<Dialogue>,
    pub info: SplitInfo,
}

/// Seeded shuffle of the ids (sorted first), then ⌊fraction × n⌋ prefix, at least 1.
pub fn sample_prefix(ids: &[&str], fraction: Fraction, seed: u64) -> Vec<String> {
    if ids.is_empty() {
        return Vec::new();
    }
    let mut pool: Vec<&str> = ids.to_vec();
    pool.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let take = fraction.floor_of(pool.len()).max(1);
    pool.into_iter().take(take).map(str::to_string).collect()
}

pub fn make_split(dialogues: &[Dialogue], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if let Some(target) = &spec.target_domain {
        if !dialogues.iter().any(|d| d.touches(target)) {
            return Err(Error::Split(format!(
                "target domain {target:?} does not occur in the corpus"
            )));
        }
    }
    let target = spec.target_domain.as_deref();
    let (pool, sampled): (Vec<&str>, Vec<String>) = match spec.mode {
        SplitMode::ZeroShot | SplitMode::FullShot => (Vec::new(), Vec::new()),
        SplitMode::CrossDomainFewShot => {
            let pool: Vec<&str> = dialogues
                .iter()
                .filter(|d| d.touches(target.unwrap_or_default()))
                .map(Dialogue::id)
                .collect();
            let sampled = sample_prefix(&pool, spec.fraction, spec.seed);
            (pool, sampled)
        }
        SplitMode::MultiDomainFewShot => {
            let pool: Vec<&str> = dialogues.iter().map(Dialogue::id).collect();
            let sampled = sample_prefix(&pool, spec.fraction, spec.seed);
            (pool, sampled)
        }
    };
    let chosen: HashSet<&str> = sampled.iter().map(String::as_str).collect();
    let in_train = |d: &Dialogue| match spec.mode {
        SplitMode::ZeroShot => !d.touches(target.unwrap_or_default()),
        SplitMode::CrossDomainFewShot => {
            !d.touches(target.unwrap_or_default()) || chosen.contains(d.id())
        }
        SplitMode::MultiDomainFewShot => chosen.contains(d.id()),
        SplitMode::FullShot => true,
    };
    let (train, heldout): (Vec<Dialogue>, Vec<Dialogue>) =
        dialogues.iter().cloned().partition(|d| in_train(d));
    if train.is_empty() {
        return Err(Error::Split(format!(
            "{} split leaves no training dialogues",
            spec.mode
        )));
    }
    let info = SplitInfo {
        spec: spec.clone(),
        input_dialogues: dialogues.len(),
        pool_size: pool.len(),
        sampled,
        train_ids: train.iter().map(|d| d.id().to_string()).collect(),
        heldout_ids: heldout.iter().map(|d| d.id().to_string()).collect(),
    };
    Ok(Split {
        train,
        heldout,
        info,
    })
}
