//! Boxes, run-length encoded binary masks and their soft downsampled counterparts.
//!
//! Masks use uncompressed row-major RLE: `counts` alternates runs of 0s and 1s and always
//! starts with a (possibly empty) run of 0s.

use crate::{Error, Result, Scalar};

/// Axis-aligned box in continuous pixel coordinates, origin at the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<S> {
    pub x1: S,
    pub y1: S,
    pub x2: S,
    pub y2: S,
}

impl<S: Scalar> BoundingBox<S> {
    /// Checked constructor: coordinates finite, non-negative, and `x1 < x2`, `y1 < y2`.
    pub fn new(x1: S, y1: S, x2: S, y2: S) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::Format(format!(
                "invalid box [{x1}, {y1}, {x2}, {y2}]"
            )))
        }
    }

    pub fn from_array(a: [S; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [S; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn is_valid(&self) -> bool {
        let c = self.to_array();
        c.iter().all(|v| v.is_finite() && *v >= S::zero()) && self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn width(&self) -> S {
        self.x2 - self.x1
    }

    pub fn height(&self) -> S {
        self.y2 - self.y1
    }

    pub fn area(&self) -> S {
        box_area(self)
    }

    /// Clamps to `[0, w] x [0, h]`. Returns `None` when nothing of positive area remains.
    pub fn clamp_to(&self, w: u32, h: u32) -> Option<Self> {
        let (w, h) = (S::of(w as f64), S::of(h as f64));
        let b = Self {
            x1: self.x1.max(S::zero()).min(w),
            y1: self.y1.max(S::zero()).min(h),
            x2: self.x2.max(S::zero()).min(w),
            y2: self.y2.max(S::zero()).min(h),
        };
        b.is_valid().then_some(b)
    }

    pub fn cast<T: Scalar>(&self) -> BoundingBox<T> {
        BoundingBox {
            x1: T::of(self.x1.to_f64_lossy()),
            y1: T::of(self.y1.to_f64_lossy()),
            x2: T::of(self.x2.to_f64_lossy()),
            y2: T::of(self.y2.to_f64_lossy()),
        }
    }
}

pub fn box_area<S: Scalar>(b: &BoundingBox<S>) -> S {
    (b.x2 - b.x1) * (b.y2 - b.y1)
}

pub fn box_intersection<S: Scalar>(a: &BoundingBox<S>, b: &BoundingBox<S>) -> S {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= S::zero() || ih <= S::zero() {
        S::zero()
    } else {
        iw * ih
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn box_iou<S: Scalar>(a: &BoundingBox<S>, b: &BoundingBox<S>) -> S {
    let inter = box_intersection(a, b);
    if inter <= S::zero() {
        return S::zero();
    }
    let union = box_area(a) + box_area(b) - inter;
    (inter / union).min(S::one())
}

/// Binary raster mask stored as row-major run lengths.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    counts: Vec<u32>,
}

impl BinaryMask {
    /// Validates that the runs cover exactly `width * height` pixels.
    pub fn from_rle(width: u32, height: u32, counts: Vec<u32>) -> Result<Self> {
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        let expected = width as u64 * height as u64;
        if total != expected {
            return Err(Error::Format(format!(
                "RLE run sum {total} does not match {width}x{height} = {expected}"
            )));
        }
        Ok(Self {
            width,
            height,
            counts,
        })
    }

    /// Encodes a row-major raster.
    pub fn from_raster(width: u32, height: u32, pixels: &[bool]) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::dims(
                format!("{} pixels", width as usize * height as usize),
                format!("{} pixels", pixels.len()),
            ));
        }
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &p in pixels {
            if p != current {
                counts.push(run);
                run = 0;
                current = p;
            }
            run += 1;
        }
        counts.push(run);
        Ok(Self {
            width,
            height,
            counts,
        })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            counts: vec![width * height],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            counts: vec![0, width * height],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn to_raster(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.width as usize * self.height as usize);
        let mut value = false;
        for &c in &self.counts {
            out.extend(std::iter::repeat_n(value, c as usize));
            value = !value;
        }
        out
    }

    /// Half-open `[start, end)` linear index ranges of foreground pixels.
    fn one_runs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += c as u64;
            (i % 2 == 1 && c > 0).then_some((start, pos))
        })
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    /// Number of pixels set in both masks, computed directly on the runs.
    pub fn intersection_area(&self, other: &Self) -> Result<u64> {
        self.check_same_dims(other)?;
        let mut total = 0u64;
        let mut a = self.one_runs().peekable();
        let mut b = other.one_runs().peekable();
        while let (Some(&(s1, e1)), Some(&(s2, e2))) = (a.peek(), b.peek()) {
            let lo = s1.max(s2);
            let hi = e1.min(e2);
            if hi > lo {
                total += hi - lo;
            }
            if e1 <= e2 {
                a.next();
            } else {
                b.next();
            }
        }
        Ok(total)
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.check_same_dims(other)?;
        let pixels: Vec<bool> = self
            .to_raster()
            .into_iter()
            .zip(other.to_raster())
            .map(|(a, b)| a && b)
            .collect();
        Self::from_raster(self.width, self.height, &pixels)
    }

    /// Tight pixel-aligned bounding box of the foreground, `None` for an empty mask.
    pub fn bounding_box<S: Scalar>(&self) -> Option<BoundingBox<S>> {
        let w = self.width as u64;
        let (mut xmin, mut ymin, mut xmax, mut ymax) = (u64::MAX, u64::MAX, 0u64, 0u64);
        for (start, end) in self.one_runs() {
            let (y0, y1) = (start / w, (end - 1) / w);
            ymin = ymin.min(y0);
            ymax = ymax.max(y1);
            if y0 == y1 {
                xmin = xmin.min(start % w);
                xmax = xmax.max((end - 1) % w);
            } else {
                // a run crossing a row edge touches both the last and first column
                xmin = 0;
                xmax = w - 1;
            }
        }
        (ymin != u64::MAX).then(|| BoundingBox {
            x1: S::of_u64(xmin),
            y1: S::of_u64(ymin),
            x2: S::of_u64(xmax + 1),
            y2: S::of_u64(ymax + 1),
        })
    }
}

pub fn mask_area(m: &BinaryMask) -> u64 {
    m.area()
}

/// `|src ∩ dst| / |src|`: the fraction of `src` covered by `dst`.
pub fn mask_coverage<S: Scalar>(src: &BinaryMask, dst: &BinaryMask) -> Result<S> {
    let inter = src.intersection_area(dst)?;
    let area = src.area();
    if area == 0 {
        return Err(Error::EmptyMask);
    }
    // exact at the ends even for scalars whose division is not correctly rounded
    Ok(match inter {
        0 => S::zero(),
        i if i == area => S::one(),
        i => S::of_u64(i) / S::of_u64(area),
    })
}

/// Fractional mask on a feature grid, row-major `height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask<S> {
    pub width: usize,
    pub height: usize,
    pub weights: Vec<S>,
}

impl<S: Scalar> SoftMask<S> {
    pub fn new(width: usize, height: usize, weights: Vec<S>) -> Result<Self> {
        if weights.len() != width * height {
            return Err(Error::dims(width * height, weights.len()));
        }
        if weights
            .iter()
            .any(|w| !w.is_finite() || *w < S::zero() || *w > S::one())
        {
            return Err(Error::Format("soft mask weights must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            weights,
        })
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            weights: vec![S::one(); width * height],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> S {
        self.weights[row * self.width + col]
    }
}

/// Source coordinate and blend weights along one axis (half-pixel centres, edge clamped).
fn bilinear_taps<S: Scalar>(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, S) {
    let scale = S::of(src_len as f64) / S::of(dst_len as f64);
    let half = S::of(0.5);
    let pos = ((S::of(dst as f64) + half) * scale - half).max(S::zero());
    let i0 = pos.floor().to_usize().unwrap_or(0).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    let frac = (pos - S::of(i0 as f64)).min(S::one());
    (i0, i1, frac)
}

/// Bilinear resampling of a binary mask to a `width x height` grid; fractional values kept.
pub fn mask_downsample<S: Scalar>(m: &BinaryMask, width: usize, height: usize) -> SoftMask<S> {
    assert!(width >= 1 && height >= 1, "target grid must be non-empty");
    let area = m.area();
    let total = m.width as u64 * m.height as u64;
    if area == 0 || area == total {
        let v = if area == 0 { S::zero() } else { S::one() };
        return SoftMask {
            width,
            height,
            weights: vec![v; width * height],
        };
    }
    let raster = m.to_raster();
    let sw = m.width as usize;
    let px = |r: usize, c: usize| if raster[r * sw + c] { S::one() } else { S::zero() };
    let cols: Vec<_> = (0..width)
        .map(|x| bilinear_taps::<S>(x, m.width as usize, width))
        .collect();
    let mut weights = Vec::with_capacity(width * height);
    for y in 0..height {
        let (r0, r1, fy) = bilinear_taps::<S>(y, m.height as usize, height);
        for &(c0, c1, fx) in &cols {
            let top = px(r0, c0) * (S::one() - fx) + px(r0, c1) * fx;
            let bottom = px(r1, c0) * (S::one() - fx) + px(r1, c1) * fx;
            let v = top * (S::one() - fy) + bottom * fy;
            weights.push(v.max(S::zero()).min(S::one()));
        }
    }
    SoftMask {
        width,
        height,
        weights,
    }
}

/// Rasterizes a box into a `w x h` mask using the pixel-centre rule: pixel `(x, y)` is set
/// when `x1 <= x + 0.5 < x2` and `y1 <= y + 0.5 < y2`. The box is clamped to the image first.
///
/// The second value is `true` when the clamped box is degenerate and the mask is empty.
pub fn box_to_full_mask<S: Scalar>(b: &BoundingBox<S>, w: u32, h: u32) -> (BinaryMask, bool) {
    let Some(b) = b.clamp_to(w, h) else {
        return (BinaryMask::empty(w, h), true);
    };
    let half = S::of(0.5);
    let inside = |lo: S, hi: S, i: u32| {
        let c = S::of(i as f64) + half;
        lo <= c && c < hi
    };
    let cols: Vec<bool> = (0..w).map(|x| inside(b.x1, b.x2, x)).collect();
    let mut pixels = Vec::with_capacity(w as usize * h as usize);
    for y in 0..h {
        let row_in = inside(b.y1, b.y2, y);
        pixels.extend(cols.iter().map(|&c| c && row_in));
    }
    let mask = BinaryMask::from_raster(w, h, &pixels).expect("raster has w*h pixels");
    let empty = mask.is_empty();
    (mask, empty)
}
