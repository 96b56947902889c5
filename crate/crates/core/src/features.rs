//! Dense feature maps, masked RoI pooling, class prototypes and cosine matching.

use std::collections::BTreeMap;

use crate::geometry::{BinaryMask, BoundingBox, SoftMask};
use crate::{Error, Result, Scalar};

/// Dense `channels x grid_h x grid_w` feature grid extracted from an `image_w x image_h` image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<S> {
    pub channels: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Channel-major, then row-major.
    pub data: Vec<S>,
    pub image_w: u32,
    pub image_h: u32,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn new(
        channels: usize,
        grid_h: usize,
        grid_w: usize,
        data: Vec<S>,
        image_w: u32,
        image_h: u32,
    ) -> Result<Self> {
        if channels == 0 || grid_h == 0 || grid_w == 0 || image_w == 0 || image_h == 0 {
            return Err(Error::Format(format!(
                "feature map dims must be positive (C={channels}, h={grid_h}, w={grid_w}, image {image_w}x{image_h})"
            )));
        }
        if data.len() != channels * grid_h * grid_w {
            return Err(Error::dims(channels * grid_h * grid_w, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("feature map contains non-finite values".into()));
        }
        Ok(Self {
            channels,
            grid_h,
            grid_w,
            data,
            image_w,
            image_h,
        })
    }

    #[inline]
    pub fn at(&self, channel: usize, row: usize, col: usize) -> S {
        self.data[(channel * self.grid_h + row) * self.grid_w + col]
    }

    /// Feature column at one grid cell.
    pub fn column(&self, row: usize, col: usize) -> FeatureVector<S> {
        FeatureVector((0..self.channels).map(|c| self.at(c, row, col)).collect())
    }
}

/// A feature vector. Prototypes and matched query features are unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<S>(pub Vec<S>);

impl<S: Scalar> FeatureVector<S> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn norm(&self) -> S {
        S::total(self.0.iter().map(|&v| v * v)).sqrt()
    }

    pub fn dot(&self, other: &Self) -> S {
        S::total(self.0.iter().zip(&other.0).map(|(&a, &b)| a * b))
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - S::one()).abs() <= S::of(1e-6)
    }

    pub fn scaled(&self, k: S) -> Self {
        Self(self.0.iter().map(|&v| v * k).collect())
    }
}

/// Inclusive cell range on a feature grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridBox {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
}

impl GridBox {
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y1..=self.y2).flat_map(move |u| (self.x1..=self.x2).map(move |v| (u, v)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportAnnotation<S> {
    pub image_id: String,
    pub bbox: BoundingBox<S>,
    pub class_id: u32,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototype<S> {
    pub class_id: u32,
    pub vector: FeatureVector<S>,
    pub support_count: usize,
}

fn axis_range<S: Scalar>(lo: S, hi: S, grid: usize, image: u32) -> (usize, usize) {
    let g = S::of(grid as f64);
    let im = S::of(image as f64);
    let last = grid - 1;
    let start = (lo * g / im).floor().max(S::zero());
    let end = (hi * g / im).ceil() - S::one();
    let start = start.to_usize().unwrap_or(0).min(last);
    let end = end.max(S::zero()).to_usize().unwrap_or(0).min(last);
    (start.min(end), end)
}

/// Scales the box into grid coordinates, flooring the min corner and taking `ceil - 1` of
/// the max corner, clamped to the grid. The range always holds at least one cell.
pub fn map_box_to_grid<S: Scalar>(b: &BoundingBox<S>, fm: &FeatureMap<S>) -> GridBox {
    let (x1, x2) = axis_range(b.x1, b.x2, fm.grid_w, fm.image_w);
    let (y1, y2) = axis_range(b.y1, b.y2, fm.grid_h, fm.image_h);
    GridBox { x1, y1, x2, y2 }
}

/// Result of masked pooling; `fallback` is set when the soft mask had no weight inside the
/// grid box and uniform weights were used instead.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiFeature<S> {
    pub vector: FeatureVector<S>,
    pub fallback: bool,
}

/// Mask-weighted mean of the feature columns inside the box's grid range.
pub fn masked_roi_pool<S: Scalar>(
    fm: &FeatureMap<S>,
    b: &BoundingBox<S>,
    sm: &SoftMask<S>,
) -> Result<RoiFeature<S>> {
    if sm.width != fm.grid_w || sm.height != fm.grid_h {
        return Err(Error::dims(
            format!("{}x{} grid", fm.grid_w, fm.grid_h),
            format!("{}x{} soft mask", sm.width, sm.height),
        ));
    }
    let gb = map_box_to_grid(b, fm);
    let n_mask = S::total(gb.cells().map(|(u, v)| sm.at(u, v)));
    let fallback = n_mask <= S::zero();
    let (weight, norm): (Box<dyn Fn(usize, usize) -> S>, S) = if fallback {
        log::warn!("soft mask is empty inside the box; pooling with uniform weights");
        let cells = (gb.x2 - gb.x1 + 1) * (gb.y2 - gb.y1 + 1);
        (Box::new(|_, _| S::one()), S::of(cells as f64))
    } else {
        (Box::new(|u, v| sm.at(u, v)), n_mask)
    };
    let mut acc = vec![S::zero(); fm.channels];
    for (u, v) in gb.cells() {
        let w = weight(u, v);
        if w == S::zero() {
            continue;
        }
        for (c, a) in acc.iter_mut().enumerate() {
            *a = *a + fm.at(c, u, v) * w;
        }
    }
    Ok(RoiFeature {
        vector: FeatureVector(acc.into_iter().map(|a| a / norm).collect()),
        fallback,
    })
}

pub fn l2_normalize<S: Scalar>(v: &FeatureVector<S>) -> Result<FeatureVector<S>> {
    let n = v.norm();
    if n <= S::zero() || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(FeatureVector(v.0.iter().map(|&x| x / n).collect()))
}

/// Per class: mean of the support features, then L2-normalized. Output sorted by class id.
pub fn build_prototypes<'a, S, I>(supports: I) -> Result<Vec<ClassPrototype<S>>>
where
    S: Scalar,
    I: IntoIterator<Item = (u32, &'a FeatureVector<S>)>,
{
    let mut sums: BTreeMap<u32, (Vec<S>, usize)> = BTreeMap::new();
    let mut dim = None;
    for (class_id, f) in supports {
        match dim {
            None => dim = Some(f.len()),
            Some(d) if d != f.len() => return Err(Error::dims(d, f.len())),
            _ => {}
        }
        let entry = sums
            .entry(class_id)
            .or_insert_with(|| (vec![S::zero(); f.len()], 0));
        for (a, &x) in entry.0.iter_mut().zip(&f.0) {
            *a = *a + x;
        }
        entry.1 += 1;
    }
    sums.into_iter()
        .map(|(class_id, (sum, count))| {
            let n = S::of(count as f64);
            let mean = FeatureVector(sum.into_iter().map(|s| s / n).collect());
            Ok(ClassPrototype {
                class_id,
                vector: l2_normalize(&mean)?,
                support_count: count,
            })
        })
        .collect()
}

pub fn cosine<S: Scalar>(a: &FeatureVector<S>, b: &FeatureVector<S>) -> Result<S> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na <= S::zero() || nb <= S::zero() {
        return Err(Error::ZeroVector);
    }
    Ok(a.dot(b) / (na * nb))
}

/// Class with the highest cosine similarity; ties go to the lowest class id.
pub fn match_proposal<S: Scalar>(
    fq: &FeatureVector<S>,
    protos: &[ClassPrototype<S>],
) -> Result<(u32, S)> {
    let mut best: Option<(u32, S)> = None;
    for p in protos {
        let sim = cosine(fq, &p.vector)?;
        best = match best {
            Some((c, s)) if s > sim || (s == sim && c < p.class_id) => Some((c, s)),
            _ => Some((p.class_id, sim)),
        };
    }
    best.ok_or(Error::EmptyPrototypes)
}
