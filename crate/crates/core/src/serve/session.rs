//! Editing sessions: the mutable state behind the HTTP service.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::{brush_color, brush_field, Falloff, FieldBrush, OrientationField};
use crate::imagecore::{check_extent, MaskImage, RasterImage};
use crate::pipeline::{region_mean, PipelineState, StageTimings};
use crate::strokes::{annotate, color_field, repopulate, GuideStroke, StrokeSet};
use crate::synthdata::AnnotationConfig;

pub const DEFAULT_UNDO_DEPTH: usize = 64;

/// Everything an edit can change. Undo restores a clone of this.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionState {
    pub image: RasterImage,
    pub mask: MaskImage,
    pub field: OrientationField,
    pub color_field: RasterImage,
    pub strokes: StrokeSet,
}

/// A session edit, tagged by `op` in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Edit {
    /// Paints (`value = true`) or erases a disk of the mask, then re-traces
    /// strokes around it.
    MaskBrush { center: [f32; 2], radius: f32, value: bool },
    StrokeAdd {
        points: Vec<[f32; 2]>,
        color: [f32; 4],
        #[serde(default = "default_width")]
        width: f32,
    },
    /// Removes stroke `index`, or the last one when absent.
    StrokeDelete {
        #[serde(default)]
        index: Option<usize>,
    },
    FieldBrush {
        center: [f32; 2],
        radius: f32,
        intensity: f32,
        /// Target orientation in degrees, `0` pointing along +x.
        angle_deg: f32,
        #[serde(default)]
        falloff: Falloff,
    },
    ColorBrush {
        center: [f32; 2],
        radius: f32,
        intensity: f32,
        color: [f32; 3],
        #[serde(default)]
        falloff: Falloff,
    },
    /// Fills the mask with the initialization network and annotates the
    /// result. Defaults to the mean colour currently under the mask.
    InitFill {
        #[serde(default)]
        color: Option<[f32; 3]>,
    },
    Undo,
}

fn default_width() -> f32 {
    2.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Preview {
    pub revision: u64,
    pub image: RasterImage,
    pub timings: StageTimings,
    pub checkpoint: String,
}

pub struct Session {
    pub id: String,
    pub revision: u64,
    pub state: SessionState,
    undo: VecDeque<SessionState>,
    undo_depth: usize,
    seed: u64,
    preview: Option<Arc<Preview>>,
}

impl Session {
    pub fn new(id: String, image: &RasterImage, mask: Option<MaskImage>, annotation: &AnnotationConfig, seed: u64, undo_depth: usize) -> Result<Self> {
        let image = image.to_rgb();
        let mask = mask.unwrap_or_else(|| MaskImage::new(image.width(), image.height()));
        check_extent(image.extent(), mask.extent(), "session mask")?;
        let state = if mask.is_empty() {
            let field = OrientationField::from_image(&image, &annotation.field)?;
            let color_field = color_field(&image, &field, &annotation.field)?;
            let strokes = StrokeSet::new(image.width(), image.height());
            SessionState { image, mask, field, color_field, strokes }
        } else {
            let a = annotate(&image, &mask, &annotation.strokes, &annotation.field, seed)?;
            SessionState {
                image,
                mask,
                field: a.field,
                color_field: a.color_field,
                strokes: a.strokes,
            }
        };
        Ok(Self {
            id,
            revision: 0,
            state,
            undo: VecDeque::new(),
            undo_depth: undo_depth.max(1),
            seed,
            preview: None,
        })
    }

    pub fn undo_len(&self) -> usize {
        self.undo.len()
    }

    fn in_image(&self, p: [f32; 2]) -> Result<()> {
        let (w, h) = self.state.image.extent();
        if !(p[0] >= 0.0 && p[1] >= 0.0 && p[0] < w as f32 && p[1] < h as f32) {
            return Err(Error::InvalidArgument(format!("point ({}, {}) lies outside the {w}x{h} image", p[0], p[1])));
        }
        Ok(())
    }

    fn repopulated(&self, state: &SessionState, center: [f32; 2], radius: f32, annotation: &AnnotationConfig) -> Result<StrokeSet> {
        repopulate(
            &state.strokes,
            &state.field,
            &state.color_field,
            &state.mask,
            center,
            radius,
            &annotation.strokes,
            self.seed ^ (self.revision + 1).wrapping_mul(0x9e37_79b9),
        )
    }

    /// Applies `edit` and returns the new revision. A failed edit leaves the
    /// session untouched.
    pub fn apply(&mut self, edit: &Edit, annotation: &AnnotationConfig, pipeline: Option<&PipelineState>) -> Result<u64> {
        if let Edit::Undo = edit {
            let prev = self.undo.pop_back().ok_or_else(|| Error::InvalidArgument("nothing to undo".into()))?;
            self.state = prev;
            self.revision += 1;
            return Ok(self.revision);
        }
        let mut next = self.state.clone();
        match edit {
            Edit::MaskBrush { center, radius, value } => {
                self.in_image(*center)?;
                positive(*radius, "mask brush radius")?;
                next.mask.paint_disk(center[0], center[1], *radius, *value);
                next.strokes = self.repopulated(&next, *center, *radius, annotation)?;
            }
            Edit::StrokeAdd { points, color, width } => {
                for p in points {
                    self.in_image(*p)?;
                }
                next.strokes.push(GuideStroke::new(points.clone(), *color, *width)?)?;
            }
            Edit::StrokeDelete { index } => {
                let n = next.strokes.len();
                let i = match index {
                    Some(i) if *i < n => *i,
                    Some(i) => return Err(Error::InvalidArgument(format!("stroke {i} does not exist ({n} strokes)"))),
                    None if n > 0 => n - 1,
                    None => return Err(Error::InvalidArgument("no strokes to delete".into())),
                };
                next.strokes.strokes.remove(i);
            }
            Edit::FieldBrush { center, radius, intensity, angle_deg, falloff } => {
                self.in_image(*center)?;
                let brush = FieldBrush::new(*center, *radius, *intensity, *falloff)?;
                next.field = brush_field(&next.field, &brush, angle_deg.to_radians())?;
                next.strokes = self.repopulated(&next, *center, *radius, annotation)?;
            }
            Edit::ColorBrush { center, radius, intensity, color, falloff } => {
                self.in_image(*center)?;
                let brush = FieldBrush::new(*center, *radius, *intensity, *falloff)?;
                next.color_field = brush_color(&next.color_field, &brush, *color)?;
                next.strokes = self.repopulated(&next, *center, *radius, annotation)?;
            }
            Edit::InitFill { color } => {
                let p = pipeline.ok_or(Error::Untrained("no checkpoint loaded"))?;
                let color = match color {
                    Some(c) => *c,
                    None => region_mean(&next.image, &next.mask)?,
                };
                let filled = p.synthesize_init(&next.image, &next.mask, color)?;
                let a = annotate(&filled, &next.mask, &annotation.strokes, &annotation.field, self.seed ^ self.revision)?;
                next.field = a.field;
                next.color_field = a.color_field;
                next.strokes = a.strokes;
            }
            Edit::Undo => unreachable!(),
        }
        let prev = std::mem::replace(&mut self.state, next);
        self.undo.push_back(prev);
        while self.undo.len() > self.undo_depth {
            self.undo.pop_front();
        }
        self.revision += 1;
        Ok(self.revision)
    }
}

fn positive(v: f32, what: &str) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidArgument(format!("{what} must be > 0, got {v}")));
    }
    Ok(())
}

/// Failures of session lookups on top of the core errors.
#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error(transparent)]
    Core(#[from] Error),
}

/// All live sessions plus the loaded checkpoint.
pub struct SessionStore {
    pipeline: Option<Arc<PipelineState>>,
    digest: String,
    pub annotation: AnnotationConfig,
    pub undo_depth: usize,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
    seed: u64,
}

impl SessionStore {
    pub fn new(pipeline: Option<PipelineState>, annotation: AnnotationConfig, seed: u64) -> Self {
        let digest = pipeline.as_ref().map(|p| p.digest()).unwrap_or_default();
        Self {
            pipeline: pipeline.map(Arc::new),
            digest,
            annotation,
            undo_depth: DEFAULT_UNDO_DEPTH,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            seed,
        }
    }

    pub fn checkpoint_digest(&self) -> Option<&str> {
        self.pipeline.as_ref().map(|_| self.digest.as_str())
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn create(&self, image: &RasterImage, mask: Option<MaskImage>) -> Result<(String, u64)> {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let id = format!("s{n:06}");
        let s = Session::new(id.clone(), image, mask, &self.annotation, self.seed.wrapping_add(n), self.undo_depth)?;
        let rev = s.revision;
        self.sessions.write().expect("session map poisoned").insert(id.clone(), Arc::new(Mutex::new(s)));
        Ok((id, rev))
    }

    pub fn get(&self, id: &str) -> std::result::Result<Arc<Mutex<Session>>, ServeError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServeError::UnknownSession(id.to_string()))
    }

    /// Edits hold the session lock for their whole duration, so concurrent
    /// edits to one session are applied one after another.
    pub fn edit(&self, id: &str, edit: &Edit) -> std::result::Result<u64, ServeError> {
        let s = self.get(id)?;
        let mut s = s.lock().expect("session poisoned");
        Ok(s.apply(edit, &self.annotation, self.pipeline.as_deref())?)
    }

    /// Copy of the current state and its revision.
    pub fn snapshot(&self, id: &str) -> std::result::Result<(u64, SessionState), ServeError> {
        let s = self.get(id)?;
        let s = s.lock().expect("session poisoned");
        Ok((s.revision, s.state.clone()))
    }

    /// Synthesizes the current revision, reusing the cached result when the
    /// revision has not changed. Returns the preview and whether it was cached.
    pub fn preview(&self, id: &str) -> std::result::Result<(Arc<Preview>, bool), ServeError> {
        let pipeline = self.pipeline.as_ref().ok_or(Error::Untrained("no checkpoint loaded"))?;
        let session = self.get(id)?;
        let (revision, state) = {
            let s = session.lock().expect("session poisoned");
            if let Some(p) = s.preview.as_ref().filter(|p| p.revision == s.revision) {
                return Ok((p.clone(), true));
            }
            (s.revision, s.state.clone())
        };
        // the lock is released while synthesizing; edits may queue meanwhile
        let out = pipeline.synthesize_timed(&state.image, &state.mask, &state.strokes)?;
        let preview = Arc::new(Preview {
            revision,
            image: out.image,
            timings: out.timings,
            checkpoint: self.digest.clone(),
        });
        let mut s = session.lock().expect("session poisoned");
        if s.preview.as_ref().is_none_or(|p| p.revision < revision) {
            s.preview = Some(preview.clone());
        }
        Ok((preview, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fibers(size: usize) -> RasterImage {
        RasterImage::from_fn(size, size, 3, |x, y, p| {
            let v = 0.5 + 0.4 * (y as f32 * 1.3 + (x as f32 * 0.07).sin()).sin();
            p.copy_from_slice(&[v, 0.6 * v, 0.3 * v]);
        })
    }

    fn disk(size: usize) -> MaskImage {
        let c = size as f32 / 2.0;
        MaskImage::from_fn(size, size, |x, y| (x as f32 - c).powi(2) + (y as f32 - c).powi(2) < (0.35 * size as f32).powi(2))
    }

    fn session() -> Session {
        Session::new("t".into(), &fibers(48), Some(disk(48)), &AnnotationConfig::default(), 3, 40).unwrap()
    }

    #[test]
    fn fields_match_the_image() {
        let s = session();
        assert_eq!(s.state.field.extent(), (48, 48));
        assert_eq!(s.state.color_field.extent(), (48, 48));
        assert_eq!(s.revision, 0);
        assert!(!s.state.strokes.is_empty());
    }

    #[test]
    fn delete_and_undo() {
        let a = AnnotationConfig::default();
        let mut s = session();
        let before = s.state.clone();
        let n = s.state.strokes.len();
        assert_eq!(s.apply(&Edit::StrokeDelete { index: None }, &a, None).unwrap(), 1);
        assert_eq!(s.state.strokes.len(), n - 1);
        assert_eq!(s.apply(&Edit::Undo, &a, None).unwrap(), 2);
        assert_eq!(s.state, before);
    }

    #[test]
    fn undo_reaches_back_32_edits() {
        let a = AnnotationConfig::default();
        let mut s = session();
        let mut states = vec![s.state.clone()];
        for i in 0..40 {
            let x = 10.0 + (i % 20) as f32;
            let edit = if i % 2 == 0 {
                Edit::StrokeAdd { points: vec![[x, 20.0], [x + 3.0, 24.0]], color: [0.2, 0.1, 0.05, 1.0], width: 2.0 }
            } else {
                Edit::FieldBrush { center: [24.0, 24.0], radius: 6.0, intensity: 0.5, angle_deg: 10.0 * i as f32, falloff: Falloff::Smooth }
            };
            s.apply(&edit, &a, None).unwrap();
            states.push(s.state.clone());
        }
        assert_eq!(s.undo_len(), 40);
        for k in 0..32 {
            s.apply(&Edit::Undo, &a, None).unwrap();
            assert_eq!(s.state, states[39 - k], "undo {k}");
        }
        assert_eq!(s.revision, 72);
    }

    #[test]
    fn undo_depth_is_bounded() {
        let a = AnnotationConfig::default();
        let mut s = Session::new("t".into(), &fibers(32), None, &a, 1, 33).unwrap();
        for _ in 0..50 {
            s.apply(&Edit::MaskBrush { center: [16.0, 16.0], radius: 3.0, value: true }, &a, None).unwrap();
        }
        assert_eq!(s.undo_len(), 33);
    }

    #[test]
    fn invalid_edits_change_nothing() {
        let a = AnnotationConfig::default();
        let mut s = session();
        let before = s.state.clone();
        for e in [
            Edit::StrokeAdd { points: vec![[1.0, 1.0], [60.0, 2.0]], color: [1.0; 4], width: 2.0 },
            Edit::StrokeDelete { index: Some(10_000) },
            Edit::FieldBrush { center: [-3.0, 4.0], radius: 4.0, intensity: 1.0, angle_deg: 0.0, falloff: Falloff::Flat },
            Edit::ColorBrush { center: [4.0, 4.0], radius: 4.0, intensity: 2.0, color: [1.0; 3], falloff: Falloff::Flat },
            Edit::MaskBrush { center: [4.0, 4.0], radius: 0.0, value: true },
            Edit::InitFill { color: None },
        ] {
            assert!(s.apply(&e, &a, None).is_err(), "{e:?}");
        }
        assert_eq!(s.state, before);
        assert_eq!(s.revision, 0);
        assert!(s.apply(&Edit::Undo, &a, None).is_err());
    }

    #[test]
    fn field_brush_realigns_strokes_in_disk() {
        let a = AnnotationConfig::default();
        let mut s = session();
        let center = [24.0, 24.0];
        s.apply(&Edit::FieldBrush { center, radius: 12.0, intensity: 1.0, angle_deg: 90.0, falloff: Falloff::Flat }, &a, None).unwrap();
        let near: Vec<&GuideStroke> = s.state.strokes.strokes.iter().filter(|st| st.passes_within(center, 4.0)).collect();
        assert!(!near.is_empty());
        for st in near {
            let inside: Vec<f32> = st
                .points
                .windows(2)
                .filter(|w| (w[0][0] - center[0]).hypot(w[0][1] - center[1]) < 8.0)
                .map(|w| (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]).to_degrees().rem_euclid(180.0))
                .collect();
            for ang in inside {
                assert!((ang - 90.0).abs() < 10.0, "segment at {ang} deg");
            }
        }
    }

    #[test]
    fn edit_json_tags() {
        let e: Edit = serde_json::from_str(r#"{"op":"stroke-delete"}"#).unwrap();
        assert_eq!(e, Edit::StrokeDelete { index: None });
        let e: Edit = serde_json::from_str(r#"{"op":"init-fill","color":[0.1,0.2,0.3]}"#).unwrap();
        assert_eq!(e, Edit::InitFill { color: Some([0.1, 0.2, 0.3]) });
        assert_eq!(serde_json::to_value(Edit::Undo).unwrap()["op"], "undo");
    }
}
