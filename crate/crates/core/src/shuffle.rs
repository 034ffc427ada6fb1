//! Local pixel shuffling: flat-tile detection on a pseudo-clean image and
//! random within-tile permutation of the noisy image.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

/// One tile of the non-overlapping grid, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Tile {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Row-major pixel coordinates of the `k`-th pixel in the tile.
    pub fn coord(&self, k: usize) -> (usize, usize) {
        (self.row + k / self.width, self.col + k % self.width)
    }
}

/// `s x s` tiles anchored at the origin; edge tiles keep their smaller size.
pub fn tiles(height: usize, width: usize, s: usize) -> Vec<Tile> {
    let mut out = Vec::with_capacity(height.div_ceil(s) * width.div_ceil(s));
    for row in (0..height).step_by(s) {
        for col in (0..width).step_by(s) {
            out.push(Tile {
                row,
                col,
                height: s.min(height - row),
                width: s.min(width - col),
            });
        }
    }
    out
}

/// Per-pixel local standard deviation and the flat-region indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatnessMap {
    height: usize,
    width: usize,
    tile: usize,
    lambda: f64,
    sigma_map: Vec<f64>,
    c_mask: Vec<u8>,
}

impl FlatnessMap {
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn tile(&self) -> usize {
        self.tile
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Row-major per-pixel standard deviation.
    pub fn sigma_map(&self) -> &[f64] {
        &self.sigma_map
    }

    /// Row-major indicator, `1` on flat pixels.
    pub fn c_mask(&self) -> &[u8] {
        &self.c_mask
    }

    pub fn is_flat(&self, row: usize, col: usize) -> bool {
        self.c_mask[row * self.width + col] == 1
    }

    pub fn flat_fraction(&self) -> f64 {
        self.c_mask.iter().map(|&c| c as f64).sum::<f64>() / self.c_mask.len() as f64
    }

    pub fn tiles(&self) -> Vec<Tile> {
        tiles(self.height, self.width, self.tile)
    }

    /// The indicator as a single-channel 0/255 image.
    pub fn mask_image(&self) -> Image {
        let data = self.c_mask.iter().map(|&c| c as f32 * 255.0).collect();
        Image::new(self.height, self.width, 1, data).expect("flatness map is non-empty")
    }
}

/// Tiles the pseudo-clean image into `s x s` blocks, takes the population
/// standard deviation of each block per channel, averages over channels and
/// marks a block flat when that value is below `lambda`.
pub fn flatness_map(pseudo_clean: &Image, s: usize, lambda: f64) -> Result<FlatnessMap> {
    let (h, w, c) = pseudo_clean.shape();
    if s < 2 {
        return Err(Error::InvalidArgument(format!("tile size must be >= 2, got {s}")));
    }
    if s > h && s > w {
        return Err(Error::InvalidArgument(format!("tile size {s} exceeds image {h}x{w}")));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let mut sigma_map = vec![0.0; h * w];
    let mut c_mask = vec![0u8; h * w];
    for t in tiles(h, w, s) {
        let n = t.pixels() as f64;
        let mut sd = 0.0;
        for ch in 0..c {
            let vals = (0..t.pixels()).map(|k| {
                let (r, col) = t.coord(k);
                pseudo_clean.get(r, col, ch) as f64
            });
            let mean = vals.clone().sum::<f64>() / n;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            sd += var.sqrt();
        }
        sd /= c as f64;
        let flat = (sd < lambda) as u8;
        for k in 0..t.pixels() {
            let (r, col) = t.coord(k);
            sigma_map[r * w + col] = sd;
            c_mask[r * w + col] = flat;
        }
    }
    Ok(FlatnessMap {
        height: h,
        width: w,
        tile: s,
        lambda,
        sigma_map,
        c_mask,
    })
}

/// Permutation applied to one flat tile: output pixel `k` takes source pixel `perm[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePermutation {
    pub tile: Tile,
    pub perm: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShuffledImage {
    pub image: Image,
    pub permutation_log: Vec<TilePermutation>,
}

impl ShuffledImage {
    /// Re-applies the logged permutations to `y`.
    pub fn replay(&self, y: &Image) -> Result<Image> {
        apply_permutations(y, &self.permutation_log)
    }
}

fn apply_permutations(y: &Image, log: &[TilePermutation]) -> Result<Image> {
    let c = y.channels();
    let mut out = y.clone();
    for tp in log {
        let t = tp.tile;
        if t.row + t.height > y.height() || t.col + t.width > y.width() || tp.perm.len() != t.pixels() {
            return Err(Error::ShapeMismatch(format!(
                "permutation for {t:?} does not fit image"
            )));
        }
        for (k, &src) in tp.perm.iter().enumerate() {
            let (dr, dc) = t.coord(k);
            let (sr, sc) = t.coord(src);
            for ch in 0..c {
                out.set(dr, dc, ch, y.get(sr, sc, ch));
            }
        }
    }
    Ok(out)
}

/// Moves whole pixels by a uniform random permutation inside every flat
/// tile; non-flat tiles are copied verbatim.
pub fn local_shuffle(y: &Image, fmap: &FlatnessMap, rng: &mut Rng) -> Result<ShuffledImage> {
    if (y.height(), y.width()) != fmap.shape() {
        return Err(Error::ShapeMismatch(format!(
            "flatness map {:?} vs image {}x{}",
            fmap.shape(),
            y.height(),
            y.width()
        )));
    }
    let mut log = Vec::new();
    for t in fmap.tiles() {
        if !fmap.is_flat(t.row, t.col) {
            continue;
        }
        let mut perm: Vec<usize> = (0..t.pixels()).collect();
        perm.shuffle(rng);
        log.push(TilePermutation { tile: t, perm });
    }
    let image = apply_permutations(y, &log)?;
    Ok(ShuffledImage {
        image,
        permutation_log: log,
    })
}
