use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{CounterRng, Purpose};

/// The sample order of one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochOrder {
    pub permutation: Vec<usize>,
    pub epoch: usize,
    pub seed: u64,
}

/// Fisher–Yates permutation of `0..n` drawn from the `(seed, epoch)` shuffle stream.
pub fn shuffle_epoch(n: usize, seed: u64, epoch: usize) -> EpochOrder {
    let mut permutation: Vec<usize> = (0..n).collect();
    let mut rng = CounterRng::new(seed, Purpose::Shuffle, epoch as u64, 0);
    permutation.shuffle(&mut rng);
    EpochOrder {
        permutation,
        epoch,
        seed,
    }
}

/// Consecutive id slices; the last one may be short and is kept.
pub fn batches(order: &EpochOrder, batch_size: usize) -> impl Iterator<Item = &[usize]> {
    order.permutation.chunks(batch_size.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub pad: usize,
    pub flip_prob: f64,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Parameter(format!(
                "flip probability must be in [0, 1], got {}",
                self.flip_prob
            )));
        }
        Ok(())
    }

    /// The stream for sample `id` in `epoch`; independent of the shuffle stream.
    pub fn stream(seed: u64, epoch: usize, id: usize) -> CounterRng {
        CounterRng::new(seed, Purpose::Augment, epoch as u64, id as u64)
    }
}

/// Crops the `h×w` window at `(oy, ox)` of the zero-padded image and
/// optionally mirrors it horizontally. `image` is `c×h×w`, row-major.
pub fn crop_flip(
    image: &[f64],
    dims: [usize; 3],
    pad: usize,
    oy: usize,
    ox: usize,
    flip: bool,
) -> Vec<f64> {
    let [c, h, w] = dims;
    let mut out = Vec::with_capacity(image.len());
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let x = if flip { w - 1 - x } else { x };
                let sy = (y + oy) as isize - pad as isize;
                let sx = (x + ox) as isize - pad as isize;
                let inside = sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w;
                out.push(if inside {
                    image[(ch * h + sy as usize) * w + sx as usize]
                } else {
                    0.0
                });
            }
        }
    }
    out
}

/// Zero-pads by `pad`, crops a uniformly placed `h×w` window and flips it
/// horizontally with probability `flip_prob`.
pub fn augment_pad_crop_flip(
    image: &[f64],
    dims: [usize; 3],
    pad: usize,
    flip_prob: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let oy = rng.random_range(0..=2 * pad);
    let ox = rng.random_range(0..=2 * pad);
    let flip = rng.random_bool(flip_prob);
    crop_flip(image, dims, pad, oy, ox, flip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn is_bijection(p: &[usize]) -> bool {
        let mut seen = vec![false; p.len()];
        p.iter().all(|&i| i < p.len() && !std::mem::replace(&mut seen[i], true))
    }

    #[test]
    fn shuffle_examples() {
        assert_eq!(shuffle_epoch(1, 3, 0).permutation, vec![0]);
        assert_eq!(shuffle_epoch(30, 3, 2), shuffle_epoch(30, 3, 2));
        assert_ne!(shuffle_epoch(30, 3, 2).permutation, shuffle_epoch(30, 3, 3).permutation);
    }

    #[test]
    fn shuffles_over_many_seeds() {
        let identity: Vec<usize> = (0..52).collect();
        let mut moved = 0;
        for seed in 0..100 {
            let p = shuffle_epoch(52, seed, 0).permutation;
            assert!(is_bijection(&p));
            moved += usize::from(p != identity);
        }
        assert!(moved >= 99);
    }

    #[test]
    fn batch_sizes() {
        let order = shuffle_epoch(5, 0, 0);
        let sizes: Vec<usize> = batches(&order, 2).map(<[usize]>::len).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        let joined: Vec<usize> = batches(&order, 2).flatten().copied().collect();
        assert_eq!(joined, order.permutation);
        assert_eq!(batches(&shuffle_epoch(4, 0, 0), 4).count(), 1);
    }

    #[test]
    fn no_pad_no_flip_is_identity() {
        let img: Vec<f64> = (0..2 * 3 * 3).map(f64::from).collect();
        let mut rng = AugmentConfig::stream(0, 0, 0);
        assert_eq!(augment_pad_crop_flip(&img, [2, 3, 3], 0, 0.0, &mut rng), img);
    }

    #[test]
    fn double_flip_restores_crop() {
        let img: Vec<f64> = (0..3 * 5 * 4).map(f64::from).collect();
        let dims = [3, 5, 4];
        let once = crop_flip(&img, dims, 2, 1, 3, true);
        let twice = crop_flip(&once, dims, 0, 0, 0, true);
        assert_eq!(twice, crop_flip(&img, dims, 2, 1, 3, false));
    }

    #[test]
    fn crop_origins_cover_all_81_windows() {
        // A single marked centre pixel always survives the crop, and where it
        // lands reveals the crop origin; every (oy, ox) pair must show up.
        let (pad, h) = (4usize, 32usize);
        let mid = h / 2;
        let mut img = vec![0.0; h * h];
        img[mid * h + mid] = 1.0;
        let mut seen = HashSet::new();
        let mut counts = vec![0usize; 81];
        for id in 0..8000 {
            let mut rng = AugmentConfig::stream(1, 0, id);
            let out = augment_pad_crop_flip(&img, [1, h, h], pad, 0.0, &mut rng);
            let pos = out.iter().position(|&v| v == 1.0).expect("centre pixel survives any crop");
            let (y, x) = (pos / h, pos % h);
            let (oy, ox) = (mid + pad - y, mid + pad - x);
            seen.insert((oy, ox));
            counts[oy * 9 + ox] += 1;
        }
        assert_eq!(seen.len(), 81);
        assert!(seen.iter().all(|&(y, x)| y <= 8 && x <= 8));
        // ~98.8 expected per window
        assert!(counts.iter().all(|&c| (50..160).contains(&c)), "{counts:?}");
    }

    #[test]
    fn flip_probability_is_respected() {
        let img: Vec<f64> = (0..4).map(f64::from).collect();
        let mut flips = 0;
        for id in 0..2000 {
            let mut rng = AugmentConfig::stream(2, 1, id);
            let out = augment_pad_crop_flip(&img, [1, 1, 4], 0, 0.5, &mut rng);
            flips += usize::from(out[0] == 3.0);
        }
        assert!((900..1100).contains(&flips), "{flips}");
    }
}
