//! Stratified image-level train/val/test partition.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::{Dataset, EegError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    assignments: BTreeMap<u32, Split>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn from_map(assignments: BTreeMap<u32, Split>, seed: u64) -> Self {
        Self { assignments, seed }
    }

    pub fn split_of(&self, image_id: u32) -> Option<Split> {
        self.assignments.get(&image_id).copied()
    }

    pub fn images_in(&self, split: Split) -> impl Iterator<Item = u32> + '_ {
        self.assignments
            .iter()
            .filter(move |(_, s)| **s == split)
            .map(|(id, _)| *id)
    }

    pub fn count(&self, split: Split) -> usize {
        self.images_in(split).count()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, Split)> + '_ {
        self.assignments.iter().map(|(k, v)| (*k, *v))
    }

    /// Text form: `# seed = N` then one `image_id,split` row per image.
    pub fn to_text(&self) -> String {
        let mut out = format!("# seed = {}\nimage_id,split\n", self.seed);
        for (id, s) in &self.assignments {
            out.push_str(&format!("{id},{s}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut seed = 0;
        let mut assignments = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("image_id") {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                if let Some((k, v)) = c.split_once('=') {
                    if k.trim() == "seed" {
                        seed = v.trim().parse().map_err(|_| format!("line {}: bad seed", i + 1))?;
                    }
                }
                continue;
            }
            let (id, s) = line
                .split_once(',')
                .ok_or_else(|| format!("line {}: expected image_id,split", i + 1))?;
            let id: u32 = id
                .trim()
                .parse()
                .map_err(|_| format!("line {}: bad image id", i + 1))?;
            if assignments.insert(id, s.trim().parse()?).is_some() {
                return Err(format!("line {}: image {id} assigned twice", i + 1));
            }
        }
        Ok(Self { assignments, seed })
    }
}

/// Largest-remainder apportionment of `n` items over `fractions`; ties in the
/// remainder go to the earlier split.
fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let quotas = fractions.map(|f| f * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

/// Splits images (never individual sequences) stratified per class. Each
/// class's images are sorted, shuffled by a per-class seeded stream, and cut
/// by largest-remainder counts.
pub fn split_dataset(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(EegError::Fractions(format!(
            "all fractions must be positive, got {fractions:?}"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(EegError::Fractions(format!("fractions sum to {sum}, not 1")));
    }
    if dataset.images().is_empty() {
        return Err(EegError::Empty);
    }
    let mut by_class: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (id, info) in dataset.images() {
        by_class.entry(info.class_id).or_default().push(*id);
    }
    let mut assignments = BTreeMap::new();
    for (class_id, mut ids) in by_class {
        if ids.len() < fractions.len() {
            return Err(EegError::ClassTooSmall {
                class_id,
                images: ids.len(),
                needed: fractions.len(),
            });
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng::stream(seed, &[0x5317, class_id as u64]));
        let counts = apportion(ids.len(), &fractions);
        let mut it = ids.into_iter();
        for (split, n) in Split::ALL.into_iter().zip(counts) {
            for id in it.by_ref().take(n) {
                assignments.insert(id, split);
            }
        }
    }
    Ok(SplitAssignment { assignments, seed })
}
