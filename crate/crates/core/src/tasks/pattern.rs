//! Pattern-shift task: 8x8 binary grids flattened row-major into 64 tokens.
//! The pretraining corpus is procedurally drawn rings; reward-one grids are a
//! deduplicated set of larger-radius rings carrying a short ascender stroke,
//! a radius band the corpus generator never reaches. The families share their
//! geometry and local pixel statistics, so the targets sit near - but
//! strictly outside - the prior's high-mass region, on the unexplained
//! boundary of ring-parameter space.

use super::Task;
use crate::seq::{TokenSequence, Vocab};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::HashSet;

pub const GRID: usize = 8;
pub const BODY_LEN: usize = GRID * GRID;
const CORPUS_SIZE: usize = 5000;
const TARGET_DRAWS: usize = 5000;

pub struct PatternShiftTask {
    vocab: Vocab,
    corpus: Vec<TokenSequence>,
    targets: Vec<TokenSequence>,
    target_index: HashSet<Vec<usize>>,
}

fn grid_to_sequence(grid: &[[bool; GRID]; GRID]) -> TokenSequence {
    let mut tokens = Vec::with_capacity(BODY_LEN);
    for row in grid {
        for &cell in row {
            tokens.push(cell as usize);
        }
    }
    TokenSequence::new(tokens)
}

/// Annulus |dist - r| <= th/2 around (cx, cy), rasterized at cell centers.
fn draw_ring(grid: &mut [[bool; GRID]; GRID], cx: f64, cy: f64, r: f64, th: f64) {
    for (i, row) in grid.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let d = ((j as f64 - cx).powi(2) + (i as f64 - cy).powi(2)).sqrt();
            if (d - r).abs() <= th / 2.0 {
                *cell = true;
            }
        }
    }
}

fn shift_grid(grid: &[[bool; GRID]; GRID], di: i64, dj: i64) -> [[bool; GRID]; GRID] {
    let mut out = [[false; GRID]; GRID];
    for (i, row) in grid.iter().enumerate() {
        for (j, &cell) in row.iter().enumerate() {
            if !cell {
                continue;
            }
            let (ni, nj) = (i as i64 + di, j as i64 + dj);
            if (0..GRID as i64).contains(&ni) && (0..GRID as i64).contains(&nj) {
                out[ni as usize][nj as usize] = true;
            }
        }
    }
    out
}

/// A centered ring with jittered center, radius and thickness, randomly
/// shifted by up to one cell. Radii stay strictly below the target range.
fn sample_ring(rng: &mut ChaCha12Rng) -> TokenSequence {
    let cx = 3.5 + rng.gen_range(-0.5..=0.5);
    let cy = 3.5 + rng.gen_range(-0.5..=0.5);
    let r = rng.gen_range(2.0..2.6);
    let th = rng.gen_range(1.0..1.5);
    let mut grid = [[false; GRID]; GRID];
    draw_ring(&mut grid, cx, cy, r, th);
    let (di, dj) = (rng.gen_range(-1..=1), rng.gen_range(-1..=1));
    grid_to_sequence(&shift_grid(&grid, di, dj))
}

/// A shifted-class glyph: a ring from a radius band just beyond the corpus
/// range, plus a short ascender stroke rising from its upper-right arc.
fn sample_target_glyph(rng: &mut ChaCha12Rng) -> TokenSequence {
    let cx = 3.5 + rng.gen_range(-0.3..=0.3);
    let cy = 3.5 + rng.gen_range(-0.3..=0.3);
    let r = rng.gen_range(2.6..2.95);
    let th = rng.gen_range(1.0..1.5);
    let mut grid = [[false; GRID]; GRID];
    draw_ring(&mut grid, cx, cy, r, th);
    let col = ((cx + r * 0.7).round() as i64).clamp(0, GRID as i64 - 1) as usize;
    let top = ((cy - r).round() as i64).max(0) as usize;
    for (i, row) in grid.iter_mut().enumerate() {
        if i <= top + 1 && i + 1 >= top {
            row[col] = true;
        }
    }
    grid_to_sequence(&grid)
}

impl PatternShiftTask {
    pub fn new(seed: u64) -> Self {
        let vocab = Vocab::with_end(vec!["0".into(), "1".into()]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x7a77_e12f);

        let mut target_index: HashSet<Vec<usize>> = HashSet::new();
        let mut targets = Vec::new();
        for _ in 0..TARGET_DRAWS {
            let s = sample_target_glyph(&mut rng);
            if target_index.insert(s.tokens.clone()) {
                targets.push(s);
            }
        }

        // The corpus may repeat grids but must never contain a target.
        let mut corpus = Vec::with_capacity(CORPUS_SIZE);
        while corpus.len() < CORPUS_SIZE {
            let s = sample_ring(&mut rng);
            if !target_index.contains(&s.tokens) {
                corpus.push(s);
            }
        }

        Self {
            vocab,
            corpus,
            targets,
            target_index,
        }
    }

    /// Minimum Hamming distance from `x` to any target grid.
    pub fn distance_to_targets(&self, x: &TokenSequence) -> usize {
        self.targets
            .iter()
            .map(|t| {
                t.tokens
                    .iter()
                    .zip(&x.tokens)
                    .filter(|(a, b)| a != b)
                    .count()
                    + t.tokens.len().abs_diff(x.tokens.len())
            })
            .min()
            .unwrap_or(usize::MAX)
    }
}

impl Task for PatternShiftTask {
    fn name(&self) -> &str {
        "pattern_shift"
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        BODY_LEN + 1
    }

    fn reward(&self, x: &TokenSequence) -> bool {
        !x.truncated && x.tokens.len() == BODY_LEN && self.target_index.contains(&x.tokens)
    }

    fn target_set(&self) -> Option<&[TokenSequence]> {
        Some(&self.targets)
    }

    fn pretrain_corpus(&self) -> &[TokenSequence] {
        &self.corpus
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_are_rewarded_and_unique() {
        let task = PatternShiftTask::new(0);
        let targets = task.target_set().unwrap();
        assert!(!targets.is_empty());
        let uniq: HashSet<&Vec<usize>> = targets.iter().map(|t| &t.tokens).collect();
        assert_eq!(uniq.len(), targets.len());
        for t in targets {
            assert!(task.reward(t));
        }
    }

    #[test]
    fn corpus_and_targets_are_disjoint() {
        let task = PatternShiftTask::new(3);
        for x in task.pretrain_corpus() {
            assert!(!task.reward(x));
        }
    }

    #[test]
    fn families_are_visually_adjacent() {
        // Rings should sit much closer to the target set than random grids do.
        let task = PatternShiftTask::new(1);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let ring_avg: f64 = task
            .pretrain_corpus()
            .iter()
            .take(100)
            .map(|x| task.distance_to_targets(x) as f64)
            .sum::<f64>()
            / 100.0;
        let rand_avg: f64 = (0..100)
            .map(|_| {
                let tokens: Vec<usize> = (0..BODY_LEN).map(|_| rng.gen_range(0..2)).collect();
                task.distance_to_targets(&TokenSequence::new(tokens)) as f64
            })
            .sum::<f64>()
            / 100.0;
        assert!(
            ring_avg < 20.0,
            "rings too far from targets: {ring_avg:.1}"
        );
        assert!(ring_avg < rand_avg * 0.75);
    }

    #[test]
    fn truncated_or_short_grids_earn_nothing() {
        let task = PatternShiftTask::new(0);
        let t = &task.target_set().unwrap()[0];
        assert!(!task.reward(&TokenSequence::truncated(t.tokens.clone())));
        assert!(!task.reward(&TokenSequence::new(t.tokens[..32].to_vec())));
    }
}
