//! Axis-aligned windows and the three-way spatial relation descriptor.
//!
//! Coordinates are continuous and intervals half-open, so the area of a
//! window is simply `(x_max - x_min) * (y_max - y_min)`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// An axis-aligned rectangle with strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl Window {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidWindow([x_min, y_min, x_max, y_max]));
        }
        Ok(Window {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    #[inline]
    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    #[inline]
    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    #[inline]
    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    #[inline]
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// True when `other` lies entirely inside `self`.
    pub fn contains(&self, other: &Window) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }
}

impl TryFrom<[f64; 4]> for Window {
    type Error = Error;

    fn try_from(a: [f64; 4]) -> Result<Self> {
        Window::new(a[0], a[1], a[2], a[3])
    }
}

impl Serialize for Window {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Window {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 4]>::deserialize(d)?;
        Window::try_from(a).map_err(serde::de::Error::custom)
    }
}

/// The three relation kinds, in the canonical order used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    Overlap,
    Part,
    Container,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::Overlap, Relation::Part, Relation::Container];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Overlap => "overlap",
            Relation::Part => "part",
            Relation::Container => "cont",
        }
    }
}

/// Relation of a window `w` to a reference window `w2`:
/// intersection over union, over `|w|`, and over `|w2|`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RelationTriple {
    pub overlap: f64,
    pub part: f64,
    pub container: f64,
}

impl RelationTriple {
    pub const IDENTICAL: RelationTriple = RelationTriple {
        overlap: 1.0,
        part: 1.0,
        container: 1.0,
    };

    pub fn as_array(&self) -> [f64; 3] {
        [self.overlap, self.part, self.container]
    }

    pub fn get(&self, r: Relation) -> f64 {
        match r {
            Relation::Overlap => self.overlap,
            Relation::Part => self.part,
            Relation::Container => self.container,
        }
    }
}

pub fn intersection_area(w: &Window, w2: &Window) -> f64 {
    let dx = w.x_max.min(w2.x_max) - w.x_min.max(w2.x_min);
    let dy = w.y_max.min(w2.y_max) - w.y_min.max(w2.y_min);
    if dx <= 0.0 || dy <= 0.0 {
        0.0
    } else {
        dx * dy
    }
}

pub fn relation_descriptor(w: &Window, w2: &Window) -> RelationTriple {
    let inter = intersection_area(w, w2);
    if inter == 0.0 {
        return RelationTriple::default();
    }
    let a = w.area();
    let b = w2.area();
    // Clamp against rounding so the [0,1] bounds and the
    // overlap <= part, container ordering hold exactly.
    let part = (inter / a).min(1.0);
    let container = (inter / b).min(1.0);
    let overlap = (inter / (a + b - inter)).min(part).min(container);
    RelationTriple {
        overlap,
        part,
        container,
    }
}

/// Intersection over union of two windows.
pub fn overlap(w: &Window, w2: &Window) -> f64 {
    relation_descriptor(w, w2).overlap
}

/// Localization loss `1 - IoU`.
pub fn overlap_loss(l: &Window, l2: &Window) -> f64 {
    1.0 - overlap(l, l2)
}
