//! Deepest-point heading regulation: steer the yaw toward the farthest
//! region of the depth image, which in a tunnel is the way ahead.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::geometry::CameraIntrinsics;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Row-major depths in meters; invalid returns are stored as `max_range`.
    pub depth: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
    pub max_range: f64,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, depth: Vec<f64>, intrinsics: CameraIntrinsics, max_range: f64) -> Result<Self> {
        if width == 0 || height == 0 || depth.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "depth raster of {} values does not match {width}x{height}",
                depth.len()
            )));
        }
        if !(max_range > 0.0) {
            return Err(Error::InvalidParameter("max_range must be positive".into()));
        }
        let depth = depth
            .into_iter()
            .map(|d| if d.is_finite() { d.clamp(0.0, max_range) } else { max_range })
            .collect();
        Ok(Self {
            width,
            height,
            depth,
            intrinsics,
            max_range,
        })
    }

    /// Image filled with one depth and centered intrinsics.
    pub fn constant(width: usize, height: usize, value: f64, hfov: f64, vfov: f64, max_range: f64) -> Self {
        Self {
            width,
            height,
            depth: vec![value.clamp(0.0, max_range); width * height],
            intrinsics: CameraIntrinsics::from_fov(width, height, hfov, vfov),
            max_range,
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, d: f64) {
        self.depth[y * self.width + x] = d;
    }

    fn with_depth(&self, depth: Vec<f64>) -> Self {
        Self { depth, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DphrParams {
    /// Edge of the square structuring element, pixels (odd).
    pub element: usize,
    pub max_width: usize,
    pub max_height: usize,
    pub clusters: usize,
    pub iterations: usize,
    /// Weight of the depth feature relative to the pixel coordinates.
    pub depth_weight: f64,
    /// Clusters whose mean depth is this fraction of `max_range` below the
    /// deepest one are merged into it.
    pub merge_fraction: f64,
    /// Minimum excess of the deepest cluster over the image mean, m.
    pub min_contrast: f64,
    /// Yaw-rate gain `l`, rad/s.
    pub gain: f64,
    pub max_rate: f64,
    /// Factor applied to the held command on each invalid frame.
    pub hold_decay: f64,
    pub seed: u64,
}

impl Default for DphrParams {
    fn default() -> Self {
        Self {
            element: 5,
            max_width: 160,
            max_height: 120,
            clusters: 10,
            iterations: 20,
            depth_weight: 1.0,
            merge_fraction: 0.02,
            min_contrast: 0.25,
            gain: 0.6,
            max_rate: 0.5,
            hold_decay: 0.5,
            seed: 0x5eed,
        }
    }
}

impl DphrParams {
    pub fn validate(&self) -> Result<()> {
        if self.element % 2 == 0 || self.clusters < 2 || self.iterations == 0 || self.max_width == 0 || self.max_height == 0 {
            return Err(Error::InvalidParameter("invalid heading-regulation parameters".into()));
        }
        if !(self.gain >= 0.0 && self.max_rate >= 0.0 && (0.0..=1.0).contains(&self.hold_decay)) {
            return Err(Error::InvalidParameter("invalid heading-regulation gains".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HeadingCommand {
    pub yaw_rate_ref: f64,
    /// Normalized horizontal centroid offset in `[-1, 1]`.
    pub centroid_x_norm: f64,
    pub valid: bool,
}

/// Sliding max (`grow`) or min along rows then columns; windows are clipped
/// at the border.
fn rank_filter(img: &DepthImage, size: usize, grow: bool) -> DepthImage {
    let r = size / 2;
    let (w, h) = (img.width, img.height);
    let pick = |a: f64, b: f64| if grow { a.max(b) } else { a.min(b) };
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &img.depth[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            tmp[y * w + x] = row[lo..=hi].iter().copied().reduce(pick).unwrap();
        }
    }
    let mut out = vec![0.0; w * h];
    for x in 0..w {
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            let mut v = tmp[lo * w + x];
            for yy in lo + 1..=hi {
                v = pick(v, tmp[yy * w + x]);
            }
            out[y * w + x] = v;
        }
    }
    img.with_depth(out)
}

pub fn dilate(img: &DepthImage, size: usize) -> DepthImage {
    rank_filter(img, size, true)
}

pub fn erode(img: &DepthImage, size: usize) -> DepthImage {
    rank_filter(img, size, false)
}

/// Grayscale close: dilation followed by erosion. Fills shallow speckle.
pub fn close(img: &DepthImage, size: usize) -> DepthImage {
    erode(&dilate(img, size), size)
}

pub fn preprocess(img: &DepthImage, params: &DphrParams) -> DepthImage {
    close(img, params.element)
}

/// Integer block average down to at most `max_w`×`max_h`; returns the image
/// and the factor.
pub fn downsample(img: &DepthImage, max_w: usize, max_h: usize) -> (DepthImage, usize) {
    let f = img.width.div_ceil(max_w).max(img.height.div_ceil(max_h)).max(1);
    if f == 1 {
        return (img.clone(), 1);
    }
    let (w, h) = (img.width / f, img.height / f);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for yy in y * f..(y + 1) * f {
                for xx in x * f..(x + 1) * f {
                    s += img.at(xx, yy);
                }
            }
            out[y * w + x] = s / (f * f) as f64;
        }
    }
    let small = DepthImage {
        width: w,
        height: h,
        depth: out,
        intrinsics: img.intrinsics.downscaled(f as f64),
        max_range: img.max_range,
    };
    (small, f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster index per pixel.
    pub labels: Vec<usize>,
    pub mean_depth: Vec<f64>,
    pub size: Vec<usize>,
}

/// k-means on `(x/W, y/H, w·d/max_range)` with depth-quantile stratified
/// seeding; stops early once assignments no longer change.
pub fn kmeans(img: &DepthImage, params: &DphrParams, frame_index: u64) -> Clustering {
    let n = img.width * img.height;
    let k = params.clusters.min(n).max(1);
    let (w, h) = (img.width as f64, img.height as f64);
    let wd = params.depth_weight / img.max_range;
    let feats: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let (x, y) = ((i % img.width) as f64 + 0.5, (i / img.width) as f64 + 0.5);
            [x / w, y / h, img.depth[i] * wd]
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| img.depth[a].total_cmp(&img.depth[b]).then(a.cmp(&b)));
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ frame_index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut centers: Vec<[f64; 3]> = (0..k)
        .map(|s| {
            let lo = s * n / k;
            let hi = ((s + 1) * n / k).max(lo + 1);
            feats[order[rng.random_range(lo..hi)]]
        })
        .collect();

    let mut labels = vec![usize::MAX; n];
    for _ in 0..params.iterations {
        let mut changed = false;
        for (i, f) in feats.iter().enumerate() {
            let mut best = 0;
            let mut bd = f64::INFINITY;
            for (c, m) in centers.iter().enumerate() {
                let d = (f[0] - m[0]).powi(2) + (f[1] - m[1]).powi(2) + (f[2] - m[2]).powi(2);
                if d < bd {
                    bd = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; 3]; k];
        let mut counts = vec![0usize; k];
        for (f, &l) in feats.iter().zip(&labels) {
            for a in 0..3 {
                sums[l][a] += f[a];
            }
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                for a in 0..3 {
                    centers[c][a] = sums[c][a] / counts[c] as f64;
                }
            }
        }
    }

    let mut sum_d = vec![0.0; k];
    let mut size = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        sum_d[l] += img.depth[i];
        size[l] += 1;
    }
    let mean_depth = sum_d
        .iter()
        .zip(&size)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NEG_INFINITY })
        .collect();
    Clustering { labels, mean_depth, size }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepestRegion {
    /// Horizontal centroid in pixels of the input image.
    pub s_x: f64,
    pub mean_depth: f64,
    /// Mean depth of the region minus the image mean, m.
    pub contrast: f64,
    /// Member mask on the clustered (possibly downsampled) raster.
    pub mask: Vec<bool>,
    pub mask_width: usize,
    pub scale: usize,
}

/// Deepest cluster, together with any cluster whose mean depth ties with it
/// within the merge tolerance. Returns `None` for a featureless image.
pub fn deepest_cluster_centroid(img: &DepthImage, params: &DphrParams, frame_index: u64) -> Option<DeepestRegion> {
    let (small, f) = downsample(img, params.max_width, params.max_height);
    let lo = small.depth.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = small.depth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-9 {
        return None;
    }
    let cl = kmeans(&small, params, frame_index);
    let best = cl.mean_depth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = params.merge_fraction * img.max_range;
    let chosen: Vec<bool> = cl.mean_depth.iter().map(|&m| m >= best - tol).collect();
    let mask: Vec<bool> = cl.labels.iter().map(|&l| chosen[l]).collect();
    let (mut sx, mut sd, mut cnt) = (0.0, 0.0, 0.0);
    for (i, &m) in mask.iter().enumerate() {
        if m {
            sx += (i % small.width) as f64 + 0.5;
            sd += small.depth[i];
            cnt += 1.0;
        }
    }
    let global = small.depth.iter().sum::<f64>() / small.depth.len() as f64;
    let mean_depth = sd / cnt;
    Some(DeepestRegion {
        s_x: sx / cnt * f as f64,
        mean_depth,
        contrast: mean_depth - global,
        mask,
        mask_width: small.width,
        scale: f,
    })
}

/// Yaw toward the centroid: right of center gives a negative (clockwise) rate.
pub fn heading_command(s_x: f64, intrinsics: &CameraIntrinsics, gain: f64, max_rate: f64) -> HeadingCommand {
    let s_bar = ((s_x - intrinsics.cx) / intrinsics.cx).clamp(-1.0, 1.0);
    HeadingCommand {
        yaw_rate_ref: (-s_bar * gain).clamp(-max_rate, max_rate),
        centroid_x_norm: s_bar,
        valid: true,
    }
}

/// Full per-frame pipeline without memory: close, cluster, command.
pub fn process_frame(img: &DepthImage, params: &DphrParams, frame_index: u64) -> (HeadingCommand, Option<DeepestRegion>) {
    let pre = preprocess(img, params);
    match deepest_cluster_centroid(&pre, params, frame_index) {
        Some(region) if region.contrast >= params.min_contrast => {
            let cmd = heading_command(region.s_x, &img.intrinsics, params.gain, params.max_rate);
            (cmd, Some(region))
        }
        region => (HeadingCommand::default(), region),
    }
}

/// Stateful regulator: holds a decaying copy of the last valid command
/// through frames with no preferred direction.
#[derive(Debug, Clone)]
pub struct HeadingRegulator {
    pub params: DphrParams,
    last: HeadingCommand,
    frames: u64,
}

impl HeadingRegulator {
    pub fn new(params: DphrParams) -> Self {
        Self {
            params,
            last: HeadingCommand::default(),
            frames: 0,
        }
    }

    pub fn last(&self) -> HeadingCommand {
        self.last
    }

    pub fn update(&mut self, img: &DepthImage) -> (HeadingCommand, Option<DeepestRegion>) {
        let (cmd, region) = process_frame(img, &self.params, self.frames);
        self.frames += 1;
        let out = if cmd.valid {
            cmd
        } else {
            HeadingCommand {
                yaw_rate_ref: self.last.yaw_rate_ref * self.params.hold_decay,
                centroid_x_norm: self.last.centroid_x_norm,
                valid: false,
            }
        };
        self.last = out;
        (out, region)
    }
}

/// Writes the image as an 8-bit PGM with the deepest region drawn white and
/// its centroid column black.
pub fn write_debug_pgm(path: &Path, img: &DepthImage, region: Option<&DeepestRegion>) -> Result<()> {
    let (w, h) = (img.width, img.height);
    let mut px: Vec<u8> = img.depth.iter().map(|d| (d / img.max_range * 160.0) as u8).collect();
    if let Some(r) = region {
        for y in 0..h {
            for x in 0..w {
                let (xs, ys) = (x / r.scale, y / r.scale);
                if xs < r.mask_width && r.mask.get(ys * r.mask_width + xs).copied().unwrap_or(false) {
                    px[y * w + x] = 255;
                }
            }
            let cx = (r.s_x as usize).min(w - 1);
            px[y * w + cx] = 0;
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| error::io(path, e))?;
    write!(file, "P5\n{w} {h}\n255\n").map_err(|e| error::io(path, e))?;
    file.write_all(&px).map_err(|e| error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HFOV: f64 = 86.0 * std::f64::consts::PI / 180.0;
    const VFOV: f64 = 57.0 * std::f64::consts::PI / 180.0;

    fn image(w: usize, h: usize, mut f: impl FnMut(usize, usize) -> f64) -> DepthImage {
        let data = (0..w * h).map(|i| f(i % w, i / w)).collect();
        DepthImage::new(w, h, data, CameraIntrinsics::from_fov(w, h, HFOV, VFOV), 6.0).unwrap()
    }

    fn naive(img: &DepthImage, size: usize, grow: bool) -> DepthImage {
        let r = size as isize / 2;
        let mut out = img.clone();
        for y in 0..img.height as isize {
            for x in 0..img.width as isize {
                let mut v = if grow { f64::NEG_INFINITY } else { f64::INFINITY };
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx >= 0 && yy >= 0 && xx < img.width as isize && yy < img.height as isize {
                            let d = img.at(xx as usize, yy as usize);
                            v = if grow { v.max(d) } else { v.min(d) };
                        }
                    }
                }
                out.set(x as usize, y as usize, v);
            }
        }
        out
    }

    /// Tunnel seen down its axis: depth grows toward the vanishing point at `(cx, cy)`.
    fn tunnel(w: usize, h: usize, cx: f64, cy: f64) -> DepthImage {
        image(w, h, |x, y| {
            let r = (((x as f64 + 0.5 - cx) / w as f64).powi(2) + ((y as f64 + 0.5 - cy) / h as f64).powi(2)).sqrt();
            (0.6 / r.max(0.1)).min(6.0)
        })
    }

    #[test]
    fn close_is_identity_on_flat_fields() {
        let img = DepthImage::constant(20, 15, 3.0, HFOV, VFOV, 6.0);
        assert_eq!(close(&img, 5), img);
    }

    #[test]
    fn close_fills_single_hole() {
        let mut img = DepthImage::constant(9, 9, 4.0, HFOV, VFOV, 6.0);
        img.set(4, 4, 0.0);
        let c = close(&img, 3);
        assert_eq!(c.at(4, 4), 4.0);
        assert!(c.depth.iter().all(|&d| d == 4.0));
    }

    #[test]
    fn close_matches_sliding_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let img = image(23, 17, |_, _| rng.random_range(0.0..6.0));
            let oracle = naive(&naive(&img, 5, true), 5, false);
            assert_eq!(close(&img, 5), oracle);
        }
    }

    #[test]
    fn two_region_centroid() {
        let img = image(100, 40, |x, _| if x < 50 { 6.0 } else { 1.0 });
        let r = deepest_cluster_centroid(&img, &DphrParams::default(), 0).unwrap();
        assert!((r.s_x - 25.0).abs() < 0.5, "s_x = {}", r.s_x);
        assert!((r.mean_depth - 6.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_disk_is_centered() {
        let img = image(128, 96, |x, y| {
            let (dx, dy) = (x as f64 + 0.5 - 64.0, y as f64 + 0.5 - 48.0);
            if dx * dx + dy * dy < 400.0 { 6.0 } else { 1.5 }
        });
        for frame in 0..20 {
            let r = deepest_cluster_centroid(&img, &DphrParams::default(), frame).unwrap();
            assert!((r.s_x - img.intrinsics.cx).abs() <= 1.0, "frame {frame}: s_x = {}", r.s_x);
        }
    }

    #[test]
    fn selected_cluster_is_deepest() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = DphrParams::default();
        for frame in 0..10 {
            let img = image(60, 40, |_, _| rng.random_range(0.0..6.0));
            let cl = kmeans(&img, &p, frame);
            let r = deepest_cluster_centroid(&img, &p, frame).unwrap();
            for (&m, &n) in cl.mean_depth.iter().zip(&cl.size) {
                if n > 0 {
                    assert!(r.mean_depth + 1e-9 >= m - p.merge_fraction * img.max_range);
                }
            }
            let best = cl.mean_depth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(r.mean_depth >= best - p.merge_fraction * img.max_range);
        }
    }

    #[test]
    fn heading_command_examples() {
        let k = CameraIntrinsics::from_fov(128, 96, HFOV, VFOV);
        assert_eq!(heading_command(k.cx, &k, 0.5, 1.0).yaw_rate_ref, 0.0);
        assert!((heading_command(128.0, &k, 0.5, 1.0).yaw_rate_ref + 0.5).abs() < 1e-12);
        assert!((heading_command(0.0, &k, 0.5, 0.3).yaw_rate_ref - 0.3).abs() < 1e-12);
        assert_eq!(heading_command(500.0, &k, 0.5, 1.0).centroid_x_norm, 1.0);
    }

    #[test]
    fn blank_wall_is_invalid_and_held_with_decay() {
        let p = DphrParams::default();
        let mut reg = HeadingRegulator::new(p);
        let left = tunnel(128, 96, 20.0, 48.0);
        let (c0, _) = reg.update(&left);
        assert!(c0.valid && c0.yaw_rate_ref > 0.0);
        let wall = DepthImage::constant(128, 96, 1.2, HFOV, VFOV, 6.0);
        let (c1, _) = reg.update(&wall);
        assert!(!c1.valid);
        assert!((c1.yaw_rate_ref - 0.5 * c0.yaw_rate_ref).abs() < 1e-12);
        let (c2, _) = reg.update(&wall);
        assert!((c2.yaw_rate_ref - 0.25 * c0.yaw_rate_ref).abs() < 1e-12);
    }

    #[test]
    fn straight_tunnel_null_command() {
        let p = DphrParams::default();
        let img = tunnel(128, 96, 64.0, 48.0);
        for frame in 0..50 {
            let (cmd, _) = process_frame(&img, &p, frame);
            assert!(cmd.valid);
            assert!(cmd.yaw_rate_ref.abs() < 0.02, "frame {frame}: {}", cmd.yaw_rate_ref);
        }
    }

    #[test]
    fn steers_toward_openings() {
        let p = DphrParams::default();
        let mut last = 0.0;
        for (i, cx) in [64.0, 56.0, 46.0, 36.0, 26.0, 16.0].iter().enumerate() {
            let left = process_frame(&tunnel(128, 96, *cx, 48.0), &p, i as u64).0;
            let right = process_frame(&tunnel(128, 96, 128.0 - cx, 48.0), &p, i as u64).0;
            if i > 0 {
                assert!(left.yaw_rate_ref > 0.0 && right.yaw_rate_ref < 0.0);
                assert!(left.yaw_rate_ref >= last - 0.01);
            }
            last = left.yaw_rate_ref;
        }
    }

    #[test]
    fn larger_images_are_downsampled() {
        let img = tunnel(640, 480, 160.0, 240.0);
        let (small, f) = downsample(&img, 160, 120);
        assert_eq!((small.width, small.height, f), (160, 120, 4));
        let r = deepest_cluster_centroid(&img, &DphrParams::default(), 0).unwrap();
        assert!((r.s_x - 160.0).abs() < 20.0, "s_x = {}", r.s_x);
    }

    #[test]
    fn debug_dump_writes_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let img = tunnel(64, 48, 20.0, 24.0);
        let (_, region) = process_frame(&img, &DphrParams::default(), 0);
        let path = dir.path().join("frame.pgm");
        write_debug_pgm(&path, &img, region.as_ref()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n64 48\n255\n"));
        assert_eq!(bytes.len(), 13 + 64 * 48);
    }

    proptest! {
        #[test]
        fn deterministic_and_bounded(seed in 0u64..1000, frame in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = image(40, 30, |_, _| rng.random_range(0.0..6.0));
            let p = DphrParams::default();
            let a = process_frame(&img, &p, frame).0;
            let b = process_frame(&img, &p, frame).0;
            prop_assert_eq!(a, b);
            prop_assert!(a.yaw_rate_ref.abs() <= p.max_rate);
        }

        #[test]
        fn command_magnitude_monotone(a in 0.0..128.0f64, b in 0.0..128.0f64) {
            let k = CameraIntrinsics::from_fov(128, 96, HFOV, VFOV);
            let ca = heading_command(a, &k, 0.6, 0.5).yaw_rate_ref;
            let cb = heading_command(b, &k, 0.6, 0.5).yaw_rate_ref;
            if (a - k.cx).abs() <= (b - k.cx).abs() {
                prop_assert!(ca.abs() <= cb.abs() + 1e-12);
            }
            prop_assert!(ca * (a - k.cx) <= 0.0);
        }
    }
}
