//! Seeded train/validation/test partition and its text manifest.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DataError;

pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

const MANIFEST_MAGIC: &str = "# fundus split manifest v1";

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Validation,
    Test,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Train, Part::Validation, Part::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Validation => "validation",
            Part::Test => "test",
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Part {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Part::Train),
            "validation" | "val" => Ok(Part::Validation),
            "test" => Ok(Part::Test),
            other => Err(format!("unknown part `{other}` (expected train, validation or test)")),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn part(&self, part: Part) -> &[String] {
        match part {
            Part::Train => &self.train,
            Part::Validation => &self.validation,
            Part::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Text manifest: a two-line header then one `<id>\t<part>` line per image.
    pub fn to_manifest(&self) -> String {
        let mut s = format!("{MANIFEST_MAGIC}\n# seed={}\n", self.seed);
        for part in Part::ALL {
            for id in self.part(part) {
                s.push_str(id);
                s.push('\t');
                s.push_str(part.as_str());
                s.push('\n');
            }
        }
        s
    }

    pub fn from_manifest(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, reason: &str| DataError::Manifest { line: line + 1, reason: reason.to_string() };
        match lines.next() {
            Some((_, l)) if l == MANIFEST_MAGIC => {}
            _ => return Err(bad(0, "missing manifest header")),
        }
        let seed = match lines.next() {
            Some((n, l)) => l
                .strip_prefix("# seed=")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(n, "expected `# seed=<integer>`"))?,
            None => return Err(bad(1, "missing seed line")),
        };
        let mut split = DatasetSplit { seed, ..Default::default() };
        let mut seen = std::collections::HashSet::new();
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (id, part) = line.split_once('\t').ok_or_else(|| bad(n, "expected `<id>\\t<part>`"))?;
            let part: Part = part.parse().map_err(|e: String| bad(n, &e))?;
            if !seen.insert(id.to_string()) {
                return Err(bad(n, &format!("duplicate id `{id}`")));
            }
            match part {
                Part::Train => split.train.push(id.to_string()),
                Part::Validation => split.validation.push(id.to_string()),
                Part::Test => split.test.push(id.to_string()),
            }
        }
        Ok(split)
    }

    pub fn write_manifest(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_manifest()).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
    }

    pub fn read_manifest(path: &Path) -> Result<Self, DataError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        Self::from_manifest(&text)
    }
}

pub fn validate_ratios(ratios: [f64; 3]) -> Result<(), DataError> {
    let ok = ratios.iter().all(|r| r.is_finite() && *r >= 0.0) && (ratios.iter().sum::<f64>() - 1.0).abs() < 1e-9;
    if ok {
        Ok(())
    } else {
        Err(DataError::Ratios(ratios))
    }
}

/// Shuffles `ids` with `seed`, then cuts contiguous parts of
/// ⌊r₀n⌋ and ⌊r₁n⌋ items; the test part takes the remainder.
pub fn split_dataset(ids: &[String], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit, DataError> {
    validate_ratios(ratios)?;
    if ids.is_empty() {
        return Err(DataError::EmptyIds);
    }
    let n = ids.len();
    // the small bias keeps e.g. 0.6 * 5 from landing just under 3
    let n_train = ((ratios[0] * n as f64) + 1e-9).floor() as usize;
    let n_val = (((ratios[1] * n as f64) + 1e-9).floor() as usize).min(n - n_train);
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(n_train + n_val);
    let validation = shuffled.split_off(n_train);
    Ok(DatasetSplit { seed, train: shuffled, validation, test })
}
