//! OpenSCAD export of hard models, and a reader for the emitted subset of
//! the language used to re-rasterize exported scripts.
//!
//! Every primitive becomes a module holding a `multmatrix` of a
//! `linear_extrude` of the sampled sketch polygon; the CSG tree is written
//! as nested `union`, `intersection` and `difference` blocks calling those
//! modules. A node made only of complemented primitives is written as the
//! difference of a bounding cube and the primitives.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Matrix4, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::field::{Grid, ScalarField};
use crate::model::ShapeModel;
use crate::sdf2d::SampledSketch;
use crate::stump::CsgNode;

use super::metrics::volumetric_iou;
use super::model_bounds;

/// Emits the CAD script of a hard model with `polyline_samples` points per
/// sketch curve (at least 4).
pub fn export_scad(model: &ShapeModel, polyline_samples: usize) -> Result<String> {
    if !model.is_hard() {
        return Err(Error::NotBinarized);
    }
    let tree = model.stump().extract_csg()?;
    let mut s = String::new();
    writeln!(
        s,
        "// extrudekit model with {} primitives",
        model.primitives().len()
    )
    .unwrap();
    writeln!(s, "// csg: {tree}").unwrap();
    let used = tree.primitives();
    for &k in &used {
        let prim = &model.primitives()[k];
        let pts = SampledSketch::from_curve(&prim.sketch.polygon(), polyline_samples)?
            .samples()
            .to_vec();
        let m = prim.pose.matrix4();
        writeln!(s, "\nmodule p{k}() {{").unwrap();
        let rows: Vec<String> = m
            .iter()
            .map(|r| format!("[{:?}, {:?}, {:?}, {:?}]", r[0], r[1], r[2], r[3]))
            .collect();
        writeln!(s, "    multmatrix([{}])", rows.join(", ")).unwrap();
        writeln!(s, "        linear_extrude(height = {:?})", prim.height).unwrap();
        let coords: Vec<String> = pts
            .iter()
            .map(|p| format!("[{:?}, {:?}]", p.x, p.y))
            .collect();
        writeln!(s, "            polygon(points = [{}]);", coords.join(", ")).unwrap();
        writeln!(s, "}}").unwrap();
    }
    s.push('\n');
    let universe = if used.is_empty() {
        None
    } else {
        let b = model_bounds(model, polyline_samples)?;
        let e = b.extent();
        Some((
            b.min - e - Vector3::repeat(1.0),
            b.max + e + Vector3::repeat(1.0),
        ))
    };
    let mut body = String::new();
    write_node(&tree, 0, universe, &mut body);
    s.push_str(&body);
    Ok(s)
}

fn write_node(
    node: &CsgNode,
    depth: usize,
    universe: Option<(Vector3<f64>, Vector3<f64>)>,
    s: &mut String,
) {
    let pad = "    ".repeat(depth);
    let block = |name: &str, children: &[&CsgNode], s: &mut String| {
        writeln!(s, "{pad}{name}() {{").unwrap();
        for c in children {
            write_node(c, depth + 1, universe, s);
        }
        writeln!(s, "{pad}}}").unwrap();
    };
    match node {
        CsgNode::Empty => writeln!(s, "{pad}union() {{}}").unwrap(),
        CsgNode::Primitive(k) => writeln!(s, "{pad}p{k}();").unwrap(),
        CsgNode::Union(c) => block("union", &c.iter().collect::<Vec<_>>(), s),
        CsgNode::Intersection(c) => block("intersection", &c.iter().collect::<Vec<_>>(), s),
        CsgNode::Difference(a, b) => block("difference", &[a, b], s),
        CsgNode::Complement(a) => {
            let (lo, hi) = universe.expect("complement nodes reference primitives");
            let e = hi - lo;
            writeln!(s, "{pad}difference() {{").unwrap();
            writeln!(
                s,
                "{pad}    translate([{:?}, {:?}, {:?}]) cube([{:?}, {:?}, {:?}]);",
                lo.x, lo.y, lo.z, e.x, e.y, e.z
            )
            .unwrap();
            write_node(a, depth + 1, universe, s);
            writeln!(s, "{pad}}}").unwrap();
        }
    }
}

/// Solid described by a script in the exported subset of the language.
#[derive(Clone, Debug, PartialEq)]
pub enum ScadShape {
    Union(Vec<ScadShape>),
    Intersection(Vec<ScadShape>),
    /// First child minus the union of the others.
    Difference(Vec<ScadShape>),
    /// Children mapped by an affine matrix; stores the inverse.
    Transform(Box<Matrix4<f64>>, Box<ScadShape>),
    /// Polygon extruded over `z ∈ [0, height]`.
    Extrude {
        height: f64,
        polygon: Vec<Vector2<f64>>,
    },
    /// Box `[0, size]`.
    Cube(Vector3<f64>),
}

impl ScadShape {
    pub fn contains(&self, p: Vector3<f64>) -> bool {
        match self {
            ScadShape::Union(c) => c.iter().any(|s| s.contains(p)),
            ScadShape::Intersection(c) => !c.is_empty() && c.iter().all(|s| s.contains(p)),
            ScadShape::Difference(c) => match c.split_first() {
                Some((first, rest)) => first.contains(p) && !rest.iter().any(|s| s.contains(p)),
                None => false,
            },
            ScadShape::Transform(inv, child) => {
                let q = **inv * Vector4::new(p.x, p.y, p.z, 1.0);
                child.contains(Vector3::new(q.x, q.y, q.z))
            }
            ScadShape::Extrude { height, polygon } => {
                p.z >= 0.0 && p.z <= *height && point_in_polygon(Vector2::new(p.x, p.y), polygon)
            }
            ScadShape::Cube(size) => (0..3).all(|a| p[a] >= 0.0 && p[a] <= size[a]),
        }
    }

    /// Binary occupancy on a 3D grid.
    pub fn rasterize(&self, grid: &Grid) -> Result<ScalarField> {
        if grid.dim() != 3 {
            return Err(invalid("rasterization needs a 3D grid"));
        }
        let values = grid
            .points3()
            .par_iter()
            .map(|p| f64::from(self.contains(*p)))
            .collect();
        ScalarField::on_grid(grid.clone(), values)
    }

    /// Number of extrusions in the expanded tree.
    pub fn extrusion_count(&self) -> usize {
        match self {
            ScadShape::Union(c) | ScadShape::Intersection(c) | ScadShape::Difference(c) => {
                c.iter().map(Self::extrusion_count).sum()
            }
            ScadShape::Transform(_, c) => c.extrusion_count(),
            ScadShape::Extrude { .. } => 1,
            ScadShape::Cube(_) => 0,
        }
    }
}

/// Even-odd crossing test.
fn point_in_polygon(p: Vector2<f64>, poly: &[Vector2<f64>]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Exports `model`, reads the script back and compares its rasterization
/// on `grid` with the model's own hard occupancy. Returns the IoU.
pub fn export_fidelity(
    model: &ShapeModel,
    polyline_samples: usize,
    grid: &Grid,
    samples_per_curve: usize,
) -> Result<f64> {
    let script = export_scad(model, polyline_samples)?;
    let shape = parse_scad(&script)?;
    let exported = shape.rasterize(grid)?;
    let internal = model.occupancy_grid(grid, samples_per_curve)?;
    volumetric_iou(&exported, &internal)
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Sym(char),
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = line.split("//").next().unwrap_or("");
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_alphabetic() || c == '_' || c == '$' {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '$')
                {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), line_no));
            } else if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' {
                let start = i;
                i += 1;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '-' || chars[i] == '+')
                            && matches!(chars[i - 1], 'e' | 'E')))
                {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let v = s
                    .parse::<f64>()
                    .map_err(|_| Error::parse("<scad>", line_no, format!("bad number `{s}`")))?;
                out.push((Tok::Num(v), line_no));
            } else if "(){}[],;=".contains(c) {
                out.push((Tok::Sym(c), line_no));
                i += 1;
            } else {
                return Err(Error::parse(
                    "<scad>",
                    line_no,
                    format!("unexpected character `{c}`"),
                ));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
enum Value {
    Num(f64),
    List(Vec<Value>),
    Bool(bool),
}

#[derive(Clone, Debug)]
struct Call {
    name: String,
    args: Vec<(Option<String>, Value)>,
    children: Vec<Call>,
    line: usize,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl Parser {
    fn line(&self) -> usize {
        self.toks
            .get(self.at)
            .or(self.toks.last())
            .map_or(0, |t| t.1)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse("<scad>", self.line(), msg)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|t| &t.0)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.at += 1;
                Ok(s)
            }
            _ => Err(self.err("expected an identifier")),
        }
    }

    fn value(&mut self) -> Result<Value> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.at += 1;
                Ok(Value::Num(v))
            }
            Some(Tok::Ident(s)) if s == "true" || s == "false" => {
                self.at += 1;
                Ok(Value::Bool(s == "true"))
            }
            Some(Tok::Sym('[')) => {
                self.at += 1;
                let mut items = Vec::new();
                if !self.eat(']') {
                    loop {
                        items.push(self.value()?);
                        if self.eat(']') {
                            break;
                        }
                        self.expect(',')?;
                    }
                }
                Ok(Value::List(items))
            }
            _ => Err(self.err("expected a value")),
        }
    }

    /// One statement; `module` definitions are stored in `modules`.
    fn statement(&mut self, modules: &mut HashMap<String, Vec<Call>>) -> Result<Option<Call>> {
        let line = self.line();
        let name = self.ident()?;
        if name == "module" {
            let m = self.ident()?;
            self.expect('(')?;
            self.expect(')')?;
            let body = self.block(modules)?;
            modules.insert(m, body);
            return Ok(None);
        }
        self.expect('(')?;
        let mut args = Vec::new();
        if !self.eat(')') {
            loop {
                let named = match (
                    self.peek().cloned(),
                    self.toks.get(self.at + 1).map(|t| &t.0),
                ) {
                    (Some(Tok::Ident(k)), Some(Tok::Sym('='))) => {
                        self.at += 2;
                        Some(k)
                    }
                    _ => None,
                };
                args.push((named, self.value()?));
                if self.eat(')') {
                    break;
                }
                self.expect(',')?;
            }
        }
        let children = if self.eat(';') {
            Vec::new()
        } else if self.peek() == Some(&Tok::Sym('{')) {
            self.block(modules)?
        } else {
            self.statement(modules)?.into_iter().collect()
        };
        Ok(Some(Call {
            name,
            args,
            children,
            line,
        }))
    }

    fn block(&mut self, modules: &mut HashMap<String, Vec<Call>>) -> Result<Vec<Call>> {
        self.expect('{')?;
        let mut out = Vec::new();
        while !self.eat('}') {
            if self.peek().is_none() {
                return Err(self.err("unterminated block"));
            }
            out.extend(self.statement(modules)?);
        }
        Ok(out)
    }
}

fn num(v: &Value, line: usize) -> Result<f64> {
    match v {
        Value::Num(x) => Ok(*x),
        _ => Err(Error::parse("<scad>", line, "expected a number")),
    }
}

fn list(v: &Value, line: usize) -> Result<&[Value]> {
    match v {
        Value::List(x) => Ok(x),
        _ => Err(Error::parse("<scad>", line, "expected a list")),
    }
}

fn arg<'a>(call: &'a Call, name: &str, pos: usize) -> Option<&'a Value> {
    call.args
        .iter()
        .find(|(k, _)| k.as_deref() == Some(name))
        .or_else(|| call.args.iter().filter(|(k, _)| k.is_none()).nth(pos))
        .map(|(_, v)| v)
}

fn build(call: &Call, modules: &HashMap<String, Vec<Call>>, depth: usize) -> Result<ScadShape> {
    let line = call.line;
    if depth > 64 {
        return Err(Error::parse("<scad>", line, "nesting too deep"));
    }
    let kids = || {
        call.children
            .iter()
            .map(|c| build(c, modules, depth + 1))
            .collect::<Result<Vec<_>>>()
    };
    let need = |name: &str, pos: usize| {
        arg(call, name, pos)
            .ok_or_else(|| Error::parse("<scad>", line, format!("`{}` needs `{name}`", call.name)))
    };
    Ok(match call.name.as_str() {
        "union" => ScadShape::Union(kids()?),
        "intersection" => ScadShape::Intersection(kids()?),
        "difference" => ScadShape::Difference(kids()?),
        "multmatrix" => {
            let rows = list(need("m", 0)?, line)?;
            let mut m = Matrix4::identity();
            for (r, row) in rows.iter().enumerate().take(4) {
                for (c, v) in list(row, line)?.iter().enumerate().take(4) {
                    m[(r, c)] = num(v, line)?;
                }
            }
            let inv = m
                .try_inverse()
                .ok_or_else(|| Error::parse("<scad>", line, "singular multmatrix"))?;
            ScadShape::Transform(Box::new(inv), Box::new(ScadShape::Union(kids()?)))
        }
        "translate" => {
            let v = list(need("v", 0)?, line)?;
            let mut inv = Matrix4::identity();
            for a in 0..3 {
                inv[(a, 3)] = -num(&v[a], line)?;
            }
            ScadShape::Transform(Box::new(inv), Box::new(ScadShape::Union(kids()?)))
        }
        "cube" => {
            let v = list(need("size", 0)?, line)?;
            if v.len() != 3 {
                return Err(Error::parse(
                    "<scad>",
                    line,
                    "cube size needs three entries",
                ));
            }
            if let Some(Value::Bool(true)) = arg(call, "center", 1) {
                return Err(Error::parse(
                    "<scad>",
                    line,
                    "centered cubes are not supported",
                ));
            }
            ScadShape::Cube(Vector3::new(
                num(&v[0], line)?,
                num(&v[1], line)?,
                num(&v[2], line)?,
            ))
        }
        "linear_extrude" => {
            let height = num(need("height", 0)?, line)?;
            let [poly] = call.children.as_slice() else {
                return Err(Error::parse(
                    "<scad>",
                    line,
                    "linear_extrude needs exactly one polygon",
                ));
            };
            if poly.name != "polygon" {
                return Err(Error::parse(
                    "<scad>",
                    poly.line,
                    "linear_extrude child must be a polygon",
                ));
            }
            let pts = list(
                arg(poly, "points", 0)
                    .ok_or_else(|| Error::parse("<scad>", poly.line, "polygon needs points"))?,
                poly.line,
            )?;
            let polygon = pts
                .iter()
                .map(|p| {
                    let xy = list(p, poly.line)?;
                    if xy.len() != 2 {
                        return Err(Error::parse("<scad>", poly.line, "polygon points are 2D"));
                    }
                    Ok(Vector2::new(
                        num(&xy[0], poly.line)?,
                        num(&xy[1], poly.line)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            ScadShape::Extrude { height, polygon }
        }
        name => match modules.get(name) {
            Some(body) => ScadShape::Union(
                body.iter()
                    .map(|c| build(c, modules, depth + 1))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => {
                return Err(Error::parse(
                    "<scad>",
                    line,
                    format!("unsupported call `{name}`"),
                ))
            }
        },
    })
}

/// Reads a script in the subset written by [`export_scad`]: `module`
/// definitions without parameters, `union`, `intersection`, `difference`,
/// `multmatrix`, `translate`, `cube`, `linear_extrude` and `polygon`.
pub fn parse_scad(text: &str) -> Result<ScadShape> {
    let mut p = Parser {
        toks: tokenize(text)?,
        at: 0,
    };
    let mut modules = HashMap::new();
    let mut top = Vec::new();
    while p.peek().is_some() {
        top.extend(p.statement(&mut modules)?);
    }
    Ok(ScadShape::Union(
        top.iter()
            .map(|c| build(c, &modules, 0))
            .collect::<Result<Vec<_>>>()?,
    ))
}
