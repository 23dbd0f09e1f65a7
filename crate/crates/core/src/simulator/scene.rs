use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pedestrian<T = f64> {
    pub full: BBox<T>,
    pub visible: BBox<T>,
}

/// Ground-truth pedestrians (full-body and visible boxes) plus human-like
/// distractors inside a `width x height` extent.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T = f64> {
    pub width: T,
    pub height: T,
    pub pedestrians: Vec<Pedestrian<T>>,
    pub distractors: Vec<BBox<T>>,
}

impl<T: Scalar> Scene<T> {
    pub fn new(width: T, height: T) -> Result<Self> {
        if !(width > T::zero() && height > T::zero() && width.is_finite() && height.is_finite()) {
            return Err(Error::InvalidInput(format!("extent must be positive, got {width} x {height}")));
        }
        Ok(Self {
            width,
            height,
            pedestrians: Vec::new(),
            distractors: Vec::new(),
        })
    }

    pub fn extent_box(&self) -> BBox<T> {
        BBox::new(T::zero(), T::zero(), self.width, self.height).expect("validated extent")
    }

    /// Full-body boxes, the regression targets.
    pub fn gts(&self) -> Vec<BBox<T>> {
        self.pedestrians.iter().map(|p| p.full).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let ext = self.extent_box();
        for (index, p) in self.pedestrians.iter().enumerate() {
            if !p.full.contains(&p.visible) {
                return Err(Error::InvalidAnnotation { index });
            }
            if !ext.contains(&p.full) {
                return Err(Error::InvalidInput(format!("pedestrian {index} outside the extent")));
            }
        }
        if let Some(i) = self.distractors.iter().position(|d| !ext.contains(d)) {
            return Err(Error::InvalidInput(format!("distractor {i} outside the extent")));
        }
        Ok(())
    }

    /// Uniformly scales every coordinate and the extent by `k > 0`.
    pub fn scaled(&self, k: T) -> Result<Self> {
        Ok(Self {
            width: self.width * k,
            height: self.height * k,
            pedestrians: self
                .pedestrians
                .iter()
                .map(|p| Ok(Pedestrian { full: p.full.scaled(k)?, visible: p.visible.scaled(k)? }))
                .collect::<Result<_>>()?,
            distractors: self.distractors.iter().map(|d| d.scaled(k)).collect::<Result<_>>()?,
        })
    }

    /// Parses the line-oriented scene format:
    ///
    /// ```text
    /// extent W H
    /// ped x1 y1 x2 y2 vx1 vy1 vx2 vy2
    /// distractor x1 y1 x2 y2
    /// ```
    ///
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut scene: Option<Self> = None;
        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut parts = content.split_whitespace();
            let tag = parts.next().unwrap_or_default();
            let nums: Vec<T> = parts
                .map(|t| {
                    t.parse::<f64>().map(T::lit).map_err(|e| Error::Parse {
                        line,
                        message: format!("bad number {t:?}: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            let want = |n: usize| {
                if nums.len() == n {
                    Ok(())
                } else {
                    Err(Error::Parse {
                        line,
                        message: format!("{tag} expects {n} numbers, found {}", nums.len()),
                    })
                }
            };
            let at = |e: Error| Error::Parse { line, message: e.to_string() };
            match tag {
                "extent" => {
                    want(2)?;
                    if scene.is_some() {
                        return Err(Error::Parse { line, message: "duplicate extent".into() });
                    }
                    scene = Some(Self::new(nums[0], nums[1]).map_err(at)?);
                }
                "ped" | "distractor" => {
                    let s = scene.as_mut().ok_or(Error::Parse {
                        line,
                        message: "extent must come first".into(),
                    })?;
                    if tag == "ped" {
                        want(8)?;
                        let full = BBox::new(nums[0], nums[1], nums[2], nums[3]).map_err(at)?;
                        let visible = BBox::new(nums[4], nums[5], nums[6], nums[7]).map_err(at)?;
                        s.pedestrians.push(Pedestrian { full, visible });
                    } else {
                        want(4)?;
                        s.distractors.push(BBox::new(nums[0], nums[1], nums[2], nums[3]).map_err(at)?);
                    }
                }
                other => {
                    return Err(Error::Parse { line, message: format!("unknown record {other:?}") });
                }
            }
        }
        let s = scene.ok_or(Error::Parse { line: 0, message: "missing extent".into() })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "extent {} {}", self.width, self.height);
        for p in &self.pedestrians {
            let (f, v) = (p.full, p.visible);
            let _ = writeln!(
                out,
                "ped {} {} {} {} {} {} {} {}",
                f.x1(), f.y1(), f.x2(), f.y2(), v.x1(), v.y1(), v.x2(), v.y2()
            );
        }
        for d in &self.distractors {
            let _ = writeln!(out, "distractor {} {} {} {}", d.x1(), d.y1(), d.x2(), d.y2());
        }
        out
    }
}
