use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{FaultLabel, Segment};
use crate::rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SplitError {
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("class {0} has {1} independent regions; at least 3 are needed to populate every split")]
    InsufficientData(String, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), SplitError> {
        let r = [self.train, self.val, self.test];
        let ok = r.iter().all(|x| x.is_finite() && *x > 0.0) && (r.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(SplitError::InvalidRatios(r))
        }
    }

    /// Largest-remainder apportionment of `n` items, with every split
    /// guaranteed at least one item.
    fn allocate(&self, n: usize) -> Option<[usize; 3]> {
        if n < 3 {
            return None;
        }
        let raw = [self.train * n as f64, self.val * n as f64, self.test * n as f64];
        let mut counts = raw.map(|x| x.floor() as usize);
        let mut left = n - counts.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            (raw[b] - raw[b].floor())
                .partial_cmp(&(raw[a] - raw[a].floor()))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let donor = (0..3).max_by_key(|&i| (counts[i], std::cmp::Reverse(i)))?;
            counts[donor] -= 1;
            counts[empty] += 1;
        }
        Some(counts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Segment>,
    pub val: Vec<Segment>,
    pub test: Vec<Segment>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl DatasetSplit {
    pub fn parts(&self) -> [(&'static str, &[Segment]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

/// Groups overlapping segments of one source into maximal regions.
fn regions(mut segs: Vec<Segment>) -> Vec<Vec<Segment>> {
    segs.sort_by(|a, b| a.origin.cmp(&b.origin));
    let mut out: Vec<Vec<Segment>> = Vec::new();
    let mut end = 0usize;
    let mut current_source: Option<String> = None;
    for s in segs {
        let same_source = current_source.as_deref() == Some(s.origin.source_id.as_str());
        if same_source && s.origin.start < end {
            end = end.max(s.range().end);
            out.last_mut().expect("open region").push(s);
        } else {
            end = s.range().end;
            current_source = Some(s.origin.source_id.clone());
            out.push(vec![s]);
        }
    }
    out
}

/// Assigns whole regions of overlapping segments to train/val/test, per
/// class, by a seeded shuffle. No sample range ever appears in two splits.
pub fn split_dataset(
    segments: Vec<Segment>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit, SplitError> {
    ratios.validate()?;
    let mut by_class: BTreeMap<FaultLabel, Vec<Segment>> = BTreeMap::new();
    for s in segments {
        by_class.entry(s.label).or_default().push(s);
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
        ratios,
    };
    for (label, segs) in by_class {
        let mut regs = regions(segs);
        let counts = ratios
            .allocate(regs.len())
            .ok_or_else(|| SplitError::InsufficientData(label.name().to_string(), regs.len()))?;
        let mut rng = rng::stream(rng::sub_seed(seed, label.id() as u64), rng::streams::SPLIT);
        regs.shuffle(&mut rng);
        let mut it = regs.into_iter();
        for (dst, n) in [&mut split.train, &mut split.val, &mut split.test]
            .into_iter()
            .zip(counts)
        {
            for r in it.by_ref().take(n) {
                dst.extend(r);
            }
        }
    }
    for part in [&mut split.train, &mut split.val, &mut split.test] {
        part.sort_by(|a, b| (a.label, &a.origin).cmp(&(b.label, &b.origin)));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::Origin;
    use proptest::prelude::*;

    fn seg(label: usize, source: &str, start: usize, len: usize) -> Segment {
        Segment {
            samples: vec![start as f64; len],
            label: FaultLabel::from_id(label).unwrap(),
            origin: Origin {
                source_id: source.into(),
                start,
            },
        }
    }

    fn tiled(classes: usize, per_class: usize) -> Vec<Segment> {
        (0..classes)
            .flat_map(|c| (0..per_class).map(move |i| seg(c, &format!("src{c}"), i * 4, 4)))
            .collect()
    }

    fn brute_force_leak(split: &DatasetSplit) -> bool {
        let parts = split.parts();
        for (i, (_, a)) in parts.iter().enumerate() {
            for (_, b) in parts.iter().skip(i + 1) {
                for x in a.iter() {
                    if b.iter().any(|y| x.overlaps(y)) {
                        return true;
                    }
                }
            }
        }
        false
    }

    #[test]
    fn exact_proportions() {
        let split = split_dataset(tiled(3, 10), SplitRatios::default(), 5).unwrap();
        for c in 0..3 {
            let count = |p: &[Segment]| p.iter().filter(|s| s.label.id() == c).count();
            assert_eq!((count(&split.train), count(&split.val), count(&split.test)), (8, 1, 1));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = split_dataset(tiled(2, 20), SplitRatios::default(), 9).unwrap();
        let b = split_dataset(tiled(2, 20), SplitRatios::default(), 9).unwrap();
        let c = split_dataset(tiled(2, 20), SplitRatios::default(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn overlapping_region_stays_together() {
        let mut segs = tiled(1, 6);
        // one long source with overlapping windows
        segs.extend((0..5).map(|i| seg(0, "long", i * 2, 4)));
        let split = split_dataset(segs, SplitRatios::default(), 1).unwrap();
        assert!(!brute_force_leak(&split));
        let holders: Vec<_> = split
            .parts()
            .iter()
            .filter(|(_, p)| p.iter().any(|s| s.origin.source_id == "long"))
            .map(|(n, _)| *n)
            .collect();
        assert_eq!(holders.len(), 1);
    }

    #[test]
    fn insufficient_and_invalid() {
        assert!(matches!(
            split_dataset(tiled(1, 2), SplitRatios::default(), 0),
            Err(SplitError::InsufficientData(..))
        ));
        let bad = SplitRatios { train: 0.5, val: 0.5, test: 0.5 };
        assert!(matches!(split_dataset(tiled(1, 9), bad, 0), Err(SplitError::InvalidRatios(_))));
    }

    #[test]
    fn small_counts_populate_every_split() {
        let r = SplitRatios::default();
        assert_eq!(r.allocate(3), Some([1, 1, 1]));
        assert_eq!(r.allocate(4), Some([2, 1, 1]));
        assert_eq!(r.allocate(100), Some([80, 10, 10]));
    }

    proptest! {
        #[test]
        fn partition_without_leakage(
            starts in prop::collection::vec((0usize..2, 0usize..3, 0usize..60), 12..60),
            seed in any::<u64>(),
        ) {
            let segs: Vec<Segment> = starts.iter()
                .map(|&(c, src, st)| seg(c, &format!("c{c}s{src}"), st, 5))
                .collect();
            let mut uniq = segs.clone();
            uniq.sort_by(|a, b| (a.label, &a.origin).cmp(&(b.label, &b.origin)));
            uniq.dedup_by(|a, b| a.label == b.label && a.origin == b.origin);
            match split_dataset(uniq.clone(), SplitRatios::default(), seed) {
                Ok(split) => {
                    let mut all: Vec<Segment> = split.train.iter().chain(&split.val).chain(&split.test).cloned().collect();
                    all.sort_by(|a, b| (a.label, &a.origin).cmp(&(b.label, &b.origin)));
                    prop_assert_eq!(all, uniq);
                    prop_assert!(!brute_force_leak(&split));
                }
                Err(SplitError::InsufficientData(..)) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
