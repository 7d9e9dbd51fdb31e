use std::collections::VecDeque;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::FrameId;
use crate::pose::Pose2D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub source: FrameId,
    pub positive: FrameId,
    pub negative: FrameId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleFrame {
    pub frame_id: FrameId,
    pub pose: Pose2D,
    pub place: usize,
    pub floor: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Positives lie strictly closer than this.
    pub positive_m: f64,
    /// Negatives lie strictly farther than this.
    pub negative_m: f64,
    /// Zero-loss evaluations in a row that release a hard triplet.
    pub clear_count: u32,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            positive_m: 2.0,
            negative_m: 3.0,
            clear_count: 2,
        }
    }
}

#[derive(Clone, Debug)]
struct Hard {
    triplet: Triplet,
    streak: u32,
}

/// Uniform triplet sampling plus a queue of hard triplets that are re-emitted
/// every batch until their loss has been zero `clear_count` times in a row.
///
/// Positives and negatives are drawn from the source's place and floor.
#[derive(Clone, Debug)]
pub struct TripletSampler {
    frames: Vec<SampleFrame>,
    positives: Vec<Vec<usize>>,
    negatives: Vec<Vec<usize>>,
    /// Frames that have at least one positive and one negative.
    sources: Vec<usize>,
    cfg: SamplerConfig,
    hard: VecDeque<Hard>,
}

impl TripletSampler {
    pub fn new(frames: Vec<SampleFrame>, cfg: SamplerConfig) -> Result<Self> {
        if !(cfg.positive_m > 0.0 && cfg.negative_m >= cfg.positive_m) || cfg.clear_count == 0 {
            return invalid("sampler needs 0 < positive_m <= negative_m and clear_count >= 1");
        }
        let n = frames.len();
        let mut positives = vec![Vec::new(); n];
        let mut negatives = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (&frames[i], &frames[j]);
                if i == j || a.place != b.place || a.floor != b.floor {
                    continue;
                }
                let d = a.pose.translation_error_m(&b.pose);
                if d < cfg.positive_m {
                    positives[i].push(j);
                } else if d > cfg.negative_m {
                    negatives[i].push(j);
                }
            }
        }
        let sources = (0..n).filter(|&i| !positives[i].is_empty() && !negatives[i].is_empty()).collect();
        Ok(Self {
            frames,
            positives,
            negatives,
            sources,
            cfg,
            hard: VecDeque::new(),
        })
    }

    pub fn config(&self) -> SamplerConfig {
        self.cfg
    }

    /// Number of frames usable as a source.
    pub fn source_count(&self) -> usize {
        self.sources.len()
    }

    pub fn hard_len(&self) -> usize {
        self.hard.len()
    }

    pub fn hard_triplets(&self) -> Vec<Triplet> {
        self.hard.iter().map(|h| h.triplet).collect()
    }

    pub fn sample_uniform(&self, rng: &mut impl Rng) -> Option<Triplet> {
        let &s = self.sources.choose(rng)?;
        let &p = self.positives[s].choose(rng)?;
        let &n = self.negatives[s].choose(rng)?;
        Some(Triplet {
            source: self.frames[s].frame_id,
            positive: self.frames[p].frame_id,
            negative: self.frames[n].frame_id,
        })
    }

    /// All queued hard triplets (oldest first), topped up with uniform draws
    /// to at least `size`.
    pub fn next_batch(&self, rng: &mut impl Rng, size: usize) -> Vec<Triplet> {
        let mut out = self.hard_triplets();
        while out.len() < size {
            match self.sample_uniform(rng) {
                Some(t) => out.push(t),
                None => break,
            }
        }
        out
    }

    /// Records the loss a triplet scored under the current descriptors.
    pub fn report(&mut self, triplet: Triplet, loss: f64) {
        let pos = self.hard.iter().position(|h| h.triplet == triplet);
        match (pos, loss > 0.0) {
            (Some(i), true) => self.hard[i].streak = 0,
            (Some(i), false) => {
                self.hard[i].streak += 1;
                if self.hard[i].streak >= self.cfg.clear_count {
                    self.hard.remove(i);
                }
            }
            (None, true) => self.hard.push_back(Hard { triplet, streak: 0 }),
            (None, false) => {}
        }
    }

    /// Draws a batch, scores it with `loss` and records the results.
    pub fn step(&mut self, rng: &mut impl Rng, size: usize, mut loss: impl FnMut(&Triplet) -> f64) -> Vec<(Triplet, f64)> {
        let batch = self.next_batch(rng, size);
        let scored: Vec<(Triplet, f64)> = batch.into_iter().map(|t| (t, loss(&t))).collect();
        for (t, l) in &scored {
            self.report(*t, *l);
        }
        scored
    }
}
