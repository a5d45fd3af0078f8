//! A complete shape: posed extrusion primitives assembled by a CSG-Stump,
//! its JSON form, and the flat parameter vector used while fitting.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::extrude::{logistic, ExtrusionParams, RigidPose};
use crate::field::{Grid, ScalarField};
use crate::sketch::{Continuity, SketchParams};
use crate::stump::{StumpMode, StumpParams};

/// Smallest probability kept away from 0 and 1 when converting stump
/// weights to logits.
const LOGIT_CLAMP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct ShapeModel {
    primitives: Vec<ExtrusionParams>,
    stump: StumpParams,
    eta: f64,
    metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    primitives: Vec<ExtrusionParams>,
    stump: StumpParams,
    eta: f64,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

impl TryFrom<ModelRepr> for ShapeModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        let mut m = ShapeModel::new(r.primitives, r.stump, r.eta)?;
        m.metadata = r.metadata;
        Ok(m)
    }
}

impl From<ShapeModel> for ModelRepr {
    fn from(m: ShapeModel) -> Self {
        ModelRepr {
            primitives: m.primitives,
            stump: m.stump,
            eta: m.eta,
            metadata: m.metadata,
        }
    }
}

impl ShapeModel {
    pub fn new(primitives: Vec<ExtrusionParams>, stump: StumpParams, eta: f64) -> Result<Self> {
        if primitives.len() != stump.n_prims() {
            return Err(Error::DimensionMismatch(format!(
                "{} primitives but the stump expects {}",
                primitives.len(),
                stump.n_prims()
            )));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(invalid(format!(
                "occupancy sharpness must be positive, got {eta}"
            )));
        }
        for p in &primitives {
            if !(p.height.is_finite() && p.height > 0.0) {
                return Err(invalid(format!(
                    "extrusion height must be positive, got {}",
                    p.height
                )));
            }
        }
        Ok(Self {
            primitives,
            stump,
            eta,
            metadata: BTreeMap::new(),
        })
    }

    /// A model with no primitives: the empty shape.
    pub fn empty() -> Self {
        let stump = StumpParams::new(vec![], vec![], vec![0.0], StumpMode::Hard)
            .expect("valid empty stump");
        Self {
            primitives: vec![],
            stump,
            eta: crate::extrude::DEFAULT_ETA,
            metadata: BTreeMap::new(),
        }
    }

    pub fn primitives(&self) -> &[ExtrusionParams] {
        &self.primitives
    }

    pub fn stump(&self) -> &StumpParams {
        &self.stump
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn is_hard(&self) -> bool {
        self.stump.mode() == StumpMode::Hard
    }

    /// Same primitives with a binarized stump.
    pub fn binarize(&self, threshold: f64) -> Result<Self> {
        Ok(Self {
            stump: self.stump.binarize(threshold)?,
            ..self.clone()
        })
    }

    /// Final occupancy at every point. A soft model uses `Φ(η · sdf)` per
    /// primitive; a hard model uses `sdf ≥ 0`.
    pub fn occupancy(&self, points: &[Vector3<f64>], samples_per_curve: usize) -> Result<Vec<f64>> {
        let prepared = self
            .primitives
            .iter()
            .map(|p| p.prepare(samples_per_curve))
            .collect::<Result<Vec<_>>>()?;
        let hard = self.is_hard();
        let eta = self.eta;
        Ok(points
            .par_iter()
            .map_init(
                || vec![0.0; prepared.len()],
                |occ, p| {
                    for (o, e) in occ.iter_mut().zip(&prepared) {
                        let s = e.sdf(*p);
                        *o = if hard {
                            f64::from(s >= 0.0)
                        } else {
                            logistic(eta * s)
                        };
                    }
                    self.stump.evaluate_point(occ)
                },
            )
            .collect())
    }

    /// Occupancy sampled on a 3D grid.
    pub fn occupancy_grid(&self, grid: &Grid, samples_per_curve: usize) -> Result<ScalarField> {
        if grid.dim() != 3 {
            return Err(invalid("model occupancy needs a 3D grid"));
        }
        let values = self.occupancy(&grid.points3(), samples_per_curve)?;
        ScalarField::on_grid(grid.clone(), values)
    }

    /// Field whose zero level set is the model surface, positive inside.
    /// Hard models combine primitive distances through the extracted CSG
    /// tree; soft models use `occupancy - 0.5`. Values are clamped to
    /// `±1e6` so empty subtrees stay finite.
    pub fn surface_field(&self, grid: &Grid, samples_per_curve: usize) -> Result<ScalarField> {
        if grid.dim() != 3 {
            return Err(invalid("a surface field needs a 3D grid"));
        }
        let points = grid.points3();
        let values = if self.is_hard() {
            let tree = self.stump.extract_csg()?;
            let prepared = self
                .primitives
                .iter()
                .map(|p| p.prepare(samples_per_curve))
                .collect::<Result<Vec<_>>>()?;
            points
                .par_iter()
                .map_init(
                    || vec![0.0; prepared.len()],
                    |sdf, p| {
                        for (s, e) in sdf.iter_mut().zip(&prepared) {
                            *s = e.sdf(*p);
                        }
                        tree.signed_value(sdf).clamp(-1e6, 1e6)
                    },
                )
                .collect()
        } else {
            self.occupancy(&points, samples_per_curve)?
                .into_iter()
                .map(|o| o - 0.5)
                .collect()
        };
        ScalarField::on_grid(grid.clone(), values)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

/// Where each primitive's variables live in the flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveSlots {
    pub n_curves: usize,
    pub mode: Continuity,
    pub start_angle: f64,
    pub sketch: Range<usize>,
    /// Raw quaternion `w, x, y, z`; normalized when decoded.
    pub rotation: Range<usize>,
    pub translation: Range<usize>,
    /// Natural log of the height.
    pub log_height: usize,
}

/// Layout of the flat fitting vector.
///
/// Per primitive: sketch unconstrained variables, raw quaternion (4),
/// translation (3), log height (1). Then the stump logits: complement (K),
/// intersection selection (K × J, row-major) and union selection (J).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelLayout {
    prims: Vec<PrimitiveSlots>,
    n_nodes: usize,
    stump_start: usize,
}

impl ModelLayout {
    /// Layout for `K` sketches of the given structure and `J` nodes.
    pub fn new(sketches: &[(usize, Continuity, f64)], n_nodes: usize) -> Result<Self> {
        if n_nodes == 0 {
            return Err(invalid("a stump needs at least one intersection node"));
        }
        let mut at = 0;
        let mut prims = Vec::with_capacity(sketches.len());
        for &(n_curves, mode, start_angle) in sketches {
            if n_curves < 2 {
                return Err(invalid(format!(
                    "a sketch needs at least 2 curves, got {n_curves}"
                )));
            }
            let nf = mode.free_count(n_curves);
            prims.push(PrimitiveSlots {
                n_curves,
                mode,
                start_angle,
                sketch: at..at + nf,
                rotation: at + nf..at + nf + 4,
                translation: at + nf + 4..at + nf + 7,
                log_height: at + nf + 7,
            });
            at += nf + 8;
        }
        Ok(Self {
            prims,
            n_nodes,
            stump_start: at,
        })
    }

    pub fn of(model: &ShapeModel) -> Result<Self> {
        let s: Vec<_> = model
            .primitives
            .iter()
            .map(|p| (p.sketch.n_curves(), p.sketch.mode(), p.sketch.start_angle()))
            .collect();
        Self::new(&s, model.stump.n_nodes())
    }

    pub fn n_prims(&self) -> usize {
        self.prims.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn len(&self) -> usize {
        self.stump_start + self.n_prims() * (1 + self.n_nodes) + self.n_nodes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn primitive(&self, k: usize) -> &PrimitiveSlots {
        &self.prims[k]
    }

    pub fn complement(&self) -> Range<usize> {
        self.stump_start..self.stump_start + self.n_prims()
    }

    pub fn inter_select(&self) -> Range<usize> {
        let a = self.complement().end;
        a..a + self.n_prims() * self.n_nodes
    }

    pub fn union_select(&self) -> Range<usize> {
        let a = self.inter_select().end;
        a..a + self.n_nodes
    }

    /// Flat vector of a soft or hard model; stump weights at 0 or 1 map to
    /// large finite logits.
    pub fn encode(&self, model: &ShapeModel) -> Result<Vec<f64>> {
        if Self::of(model)? != *self {
            return Err(Error::DimensionMismatch(
                "model does not match the layout".into(),
            ));
        }
        let logit = |p: f64| {
            let p = p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
            (p / (1.0 - p)).ln()
        };
        let mut x = Vec::with_capacity(self.len());
        for p in &model.primitives {
            x.extend(p.sketch.to_unconstrained());
            x.extend(p.pose.rotation());
            x.extend(p.pose.translation().iter());
            x.push(p.height.ln());
        }
        let st = &model.stump;
        x.extend(st.complement().iter().map(|&v| logit(v)));
        x.extend(st.inter_select().iter().map(|&v| logit(v)));
        x.extend(st.union_select().iter().map(|&v| logit(v)));
        Ok(x)
    }

    /// Primitives described by `x`.
    pub fn decode_primitives(&self, x: &[f64]) -> Result<Vec<ExtrusionParams>> {
        self.check(x)?;
        self.prims
            .iter()
            .map(|s| {
                let sketch = SketchParams::from_unconstrained(
                    s.n_curves,
                    s.mode,
                    s.start_angle,
                    &x[s.sketch.clone()],
                )?;
                let r = &x[s.rotation.clone()];
                let t = &x[s.translation.clone()];
                let pose =
                    RigidPose::new([r[0], r[1], r[2], r[3]], Vector3::new(t[0], t[1], t[2]))?;
                ExtrusionParams::new(sketch, pose, x[s.log_height].exp())
            })
            .collect()
    }

    /// Soft stump described by the logits in `x`.
    pub fn decode_stump(&self, x: &[f64]) -> Result<StumpParams> {
        self.check(x)?;
        let sig = |r: Range<usize>| x[r].iter().map(|&v| logistic(v)).collect::<Vec<_>>();
        StumpParams::new(
            sig(self.complement()),
            sig(self.inter_select()),
            sig(self.union_select()),
            StumpMode::Soft,
        )
    }

    pub fn decode(&self, x: &[f64], eta: f64) -> Result<ShapeModel> {
        ShapeModel::new(self.decode_primitives(x)?, self.decode_stump(x)?, eta)
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector has {} entries, layout expects {}",
                x.len(),
                self.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("parameter {i} is not finite")));
        }
        Ok(())
    }
}
