//! Micro-batch planning with a fixed number of groups and images per group,
//! so every batch has both within-group and cross-group pairs.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::AnnotatedImage;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Groups per micro-batch.
    pub m: usize,
    /// Images per group in a micro-batch.
    pub n: usize,
    /// Micro-batches per optimizer step.
    pub accumulation: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            m: 2,
            n: 4,
            accumulation: 2,
            seed: 42,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.n < 2 {
            return Err(Error::invalid(format!("need m >= 2 and n >= 2, got m = {}, n = {}", self.m, self.n)));
        }
        if self.accumulation == 0 {
            return Err(Error::invalid("accumulation must be >= 1"));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.m * self.n
    }

    /// Same-group unordered pairs per micro-batch, `m·C(n, 2)`.
    pub fn within_pairs(&self) -> usize {
        self.m * self.n * (self.n - 1) / 2
    }

    /// Cross-group unordered pairs per micro-batch, `C(m, 2)·n²`.
    pub fn cross_pairs(&self) -> usize {
        self.m * (self.m - 1) / 2 * self.n * self.n
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroBatch {
    pub epoch: usize,
    /// Position within the epoch.
    pub index: usize,
    /// Optimizer step within the epoch this micro-batch accumulates into.
    pub step: usize,
    pub groups: Vec<String>,
    /// `n` ids per group, in the order of `groups`.
    pub image_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub batches: Vec<MicroBatch>,
    /// Groups with fewer than `n` images.
    pub skipped_groups: Vec<String>,
}

fn eligible_groups<'a>(images: &'a [AnnotatedImage], cfg: &SamplerConfig) -> Result<(Vec<(&'a str, Vec<&'a str>)>, Vec<String>)> {
    cfg.validate()?;
    let mut by_group: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for img in images {
        by_group.entry(&img.group_id).or_default().push(&img.image_id);
    }
    let mut skipped = Vec::new();
    let mut eligible = Vec::new();
    for (g, ids) in by_group {
        if ids.len() < cfg.n {
            log::warn!("group `{g}` has {} images (< n = {}); skipped", ids.len(), cfg.n);
            skipped.push(g.to_string());
        } else {
            eligible.push((g, ids));
        }
    }
    if eligible.len() < cfg.m {
        return Err(Error::invalid(format!(
            "need at least m = {} groups with >= {} images, found {}",
            cfg.m,
            cfg.n,
            eligible.len()
        )));
    }
    Ok((eligible, skipped))
}

/// Plans one epoch.
///
/// Each group's images are shuffled and cut into chunks of `n`; a short final
/// chunk is topped up with other images of the same group. Micro-batches take
/// one chunk from each of the `m` groups with the most chunks left (random
/// tiebreak). When fewer than `m` groups still have chunks, the rest of the
/// batch is filled with fresh `n`-image draws from other groups. The batch
/// order is shuffled at the end.
pub fn make_epoch(images: &[AnnotatedImage], cfg: &SamplerConfig) -> Result<EpochPlan> {
    make_epoch_numbered(images, cfg, 0)
}

fn make_epoch_numbered(images: &[AnnotatedImage], cfg: &SamplerConfig, epoch: usize) -> Result<EpochPlan> {
    let (groups, skipped_groups) = eligible_groups(images, cfg)?;
    let mut rng = stream_rng(cfg.seed, epoch as u64);
    let n = cfg.n;

    let mut queues: Vec<Vec<Vec<&str>>> = groups
        .iter()
        .map(|(_, ids)| {
            let mut ids = ids.clone();
            ids.shuffle(&mut rng);
            let mut chunks: Vec<Vec<&str>> = ids.chunks(n).map(<[&str]>::to_vec).collect();
            let last = chunks.last_mut().expect("group has at least n images");
            if last.len() < n {
                let mut pool: Vec<&str> = ids.iter().copied().filter(|id| !last.contains(id)).collect();
                pool.shuffle(&mut rng);
                let missing = n - last.len();
                last.extend_from_slice(&pool[..missing]);
            }
            // pop from the back in shuffled order
            chunks.reverse();
            chunks
        })
        .collect();

    let mut raw: Vec<(Vec<usize>, Vec<Vec<&str>>)> = Vec::new();
    loop {
        let mut live: Vec<(usize, u64, usize)> = queues
            .iter()
            .enumerate()
            .filter(|(_, q)| !q.is_empty())
            .map(|(g, q)| (q.len(), rng.random::<u64>(), g))
            .collect();
        if live.is_empty() {
            break;
        }
        live.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)));
        let mut chosen: Vec<usize> = live.iter().take(cfg.m).map(|&(_, _, g)| g).collect();
        let mut chunks: Vec<Vec<&str>> = chosen
            .iter()
            .map(|&g| queues[g].pop().expect("live group has a chunk"))
            .collect();
        if chosen.len() < cfg.m {
            let mut others: Vec<usize> = (0..groups.len()).filter(|g| !chosen.contains(g)).collect();
            others.shuffle(&mut rng);
            for g in others.into_iter().take(cfg.m - chosen.len()) {
                chunks.push(groups[g].1.choose_multiple(&mut rng, n).copied().collect());
                chosen.push(g);
            }
        }
        raw.push((chosen, chunks));
    }
    raw.shuffle(&mut rng);

    let batches = raw
        .into_iter()
        .enumerate()
        .map(|(index, (chosen, chunks))| MicroBatch {
            epoch,
            index,
            step: index / cfg.accumulation,
            groups: chosen.iter().map(|&g| groups[g].0.to_string()).collect(),
            image_ids: chunks.into_iter().flatten().map(str::to_string).collect(),
        })
        .collect();
    Ok(EpochPlan {
        batches,
        skipped_groups,
    })
}

/// Endless sequence of micro-batches; epoch `e` is planned from stream `e` of
/// the seed.
pub struct BatchStream<'a> {
    images: &'a [AnnotatedImage],
    cfg: SamplerConfig,
    epoch: usize,
    pending: std::vec::IntoIter<MicroBatch>,
}

impl<'a> BatchStream<'a> {
    pub fn new(images: &'a [AnnotatedImage], cfg: SamplerConfig) -> Result<Self> {
        // fail early on unusable input
        eligible_groups(images, &cfg)?;
        Ok(Self {
            images,
            cfg,
            epoch: 0,
            pending: Vec::new().into_iter(),
        })
    }
}

impl Iterator for BatchStream<'_> {
    type Item = MicroBatch;

    fn next(&mut self) -> Option<MicroBatch> {
        loop {
            if let Some(b) = self.pending.next() {
                return Some(b);
            }
            let plan = make_epoch_numbered(self.images, &self.cfg, self.epoch).ok()?;
            self.epoch += 1;
            self.pending = plan.batches.into_iter();
        }
    }
}
