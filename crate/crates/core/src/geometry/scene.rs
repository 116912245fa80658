//! Analytic part shapes, CSG scenes, and the plain-text scene file.
//!
//! Scene files are `key=value` lines; `#` starts a comment. Keys:
//!
//! ```text
//! name=chair                      # optional scene id
//! part.<i>.kind=sphere|box|torus|capsule
//! part.<i>.radius=<r>             # sphere, capsule
//! part.<i>.half_extents=<x>,<y>,<z>   # box
//! part.<i>.major=<R>              # torus (ring in the xz plane)
//! part.<i>.minor=<r>              # torus, tube radius
//! part.<i>.half_len=<h>           # capsule (segment along y)
//! part.<i>.translate=<x>,<y>,<z>  # default 0,0,0
//! part.<i>.rotate=<rx>,<ry>,<rz>  # Euler degrees, applied x then y then z
//! part.<i>.label=<k>              # color label, default i
//! palette.<k>=<r>,<g>,<b>         # components in [0,1]
//! csg=union(0,diff(1,2))          # default: union of all parts
//! ```
//!
//! CSG operators are `union(..)`, `inter(..)` (alias `intersection`) and
//! `diff(a, b)` (alias `difference`); leaves are part indices.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Rotation3, UnitQuaternion};

use crate::{Error, Result, Vec3};

/// Distance assigned everywhere for a scene with no parts: the diameter of
/// the bounding cube, so the scene reads as empty space.
pub const EMPTY_DISTANCE: f64 = 2.0 * 1.732_050_807_568_877_2;

const DEFAULT_COLORS: [[f64; 3]; 6] = [
    [0.85, 0.15, 0.15],
    [0.15, 0.35, 0.85],
    [0.15, 0.7, 0.25],
    [0.9, 0.65, 0.1],
    [0.6, 0.2, 0.7],
    [0.1, 0.7, 0.7],
];

#[derive(Debug, Clone, PartialEq)]
pub enum ShapeKind {
    Sphere { radius: f64 },
    Box { half_extents: Vec3 },
    Torus { major: f64, minor: f64 },
    Capsule { half_len: f64, radius: f64 },
}

impl ShapeKind {
    /// Exact signed distance in the shape's local frame.
    pub fn local_sdf(&self, p: &Vec3) -> f64 {
        match self {
            ShapeKind::Sphere { radius } => p.norm() - radius,
            ShapeKind::Box { half_extents } => {
                let q = p.abs() - half_extents;
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
            ShapeKind::Torus { major, minor } => {
                let ring = (p.x * p.x + p.z * p.z).sqrt() - major;
                (ring * ring + p.y * p.y).sqrt() - minor
            }
            ShapeKind::Capsule { half_len, radius } => {
                let y = p.y - p.y.clamp(-half_len, *half_len);
                (p.x * p.x + y * y + p.z * p.z).sqrt() - radius
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            ShapeKind::Sphere { radius } => *radius > 0.0,
            ShapeKind::Box { half_extents } => half_extents.iter().all(|v| *v > 0.0),
            ShapeKind::Torus { major, minor } => *major > 0.0 && *minor > 0.0,
            ShapeKind::Capsule { half_len, radius } => *half_len > 0.0 && *radius > 0.0,
        };
        if ok && self.params_finite() {
            Ok(())
        } else {
            Err(Error::InvalidScene(format!(
                "shape dimensions must be strictly positive: {self:?}"
            )))
        }
    }

    fn params_finite(&self) -> bool {
        match self {
            ShapeKind::Sphere { radius } => radius.is_finite(),
            ShapeKind::Box { half_extents } => half_extents.iter().all(|v| v.is_finite()),
            ShapeKind::Torus { major, minor } => major.is_finite() && minor.is_finite(),
            ShapeKind::Capsule { half_len, radius } => half_len.is_finite() && radius.is_finite(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticShape {
    pub kind: ShapeKind,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
    pub color_label: usize,
}

impl AnalyticShape {
    pub fn new(kind: ShapeKind) -> Self {
        AnalyticShape {
            kind,
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
            color_label: 0,
        }
    }

    pub fn sphere(radius: f64) -> Self {
        Self::new(ShapeKind::Sphere { radius })
    }

    pub fn cube(half: f64) -> Self {
        Self::new(ShapeKind::Box {
            half_extents: Vec3::new(half, half, half),
        })
    }

    pub fn translated(mut self, t: Vec3) -> Self {
        self.translation = t;
        self
    }

    pub fn rotated(mut self, r: UnitQuaternion<f64>) -> Self {
        self.rotation = r;
        self
    }

    pub fn labeled(mut self, label: usize) -> Self {
        self.color_label = label;
        self
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        let local = self.rotation.inverse_transform_vector(&(p - self.translation));
        self.kind.local_sdf(&local)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Csg {
    Part(usize),
    Union(Vec<Csg>),
    Intersection(Vec<Csg>),
    Difference(Box<Csg>, Box<Csg>),
}

impl Csg {
    fn eval(&self, parts: &[f64]) -> f64 {
        match self {
            Csg::Part(i) => parts[*i],
            Csg::Union(xs) => xs.iter().map(|c| c.eval(parts)).fold(f64::INFINITY, f64::min),
            Csg::Intersection(xs) => xs
                .iter()
                .map(|c| c.eval(parts))
                .fold(f64::NEG_INFINITY, f64::max),
            Csg::Difference(a, b) => a.eval(parts).max(-b.eval(parts)),
        }
    }

    fn check(&self, n_parts: usize) -> Result<()> {
        match self {
            Csg::Part(i) if *i < n_parts => Ok(()),
            Csg::Part(i) => Err(Error::InvalidScene(format!(
                "csg references part {i} but scene has {n_parts} parts"
            ))),
            Csg::Union(xs) | Csg::Intersection(xs) => {
                if xs.is_empty() {
                    return Err(Error::InvalidScene("empty csg operator".into()));
                }
                xs.iter().try_for_each(|c| c.check(n_parts))
            }
            Csg::Difference(a, b) => {
                a.check(n_parts)?;
                b.check(n_parts)
            }
        }
    }

    pub fn parse(src: &str) -> Result<Csg> {
        let mut parser = CsgParser {
            chars: src.chars().filter(|c| !c.is_whitespace()).collect(),
            pos: 0,
        };
        let node = parser.node()?;
        if parser.pos != parser.chars.len() {
            return Err(parser.err("trailing input"));
        }
        Ok(node)
    }
}

impl std::fmt::Display for Csg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let list = |f: &mut std::fmt::Formatter<'_>, name: &str, xs: &[Csg]| {
            write!(f, "{name}(")?;
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{x}")?;
            }
            write!(f, ")")
        };
        match self {
            Csg::Part(i) => write!(f, "{i}"),
            Csg::Union(xs) => list(f, "union", xs),
            Csg::Intersection(xs) => list(f, "inter", xs),
            Csg::Difference(a, b) => write!(f, "diff({a},{b})"),
        }
    }
}

struct CsgParser {
    chars: Vec<char>,
    pos: usize,
}

impl CsgParser {
    fn err(&self, msg: &str) -> Error {
        Error::InvalidScene(format!("csg: {msg} at offset {}", self.pos))
    }

    fn node(&mut self) -> Result<Csg> {
        let start = self.pos;
        while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let word: String = self.chars[start..self.pos].iter().collect();
        if word.is_empty() {
            return Err(self.err("expected operator or part index"));
        }
        if word.chars().all(|c| c.is_ascii_digit()) {
            return word.parse().map(Csg::Part).map_err(|_| self.err("bad index"));
        }
        self.expect('(')?;
        let mut args = vec![self.node()?];
        while self.peek() == Some(',') {
            self.pos += 1;
            args.push(self.node()?);
        }
        self.expect(')')?;
        match word.as_str() {
            "union" => Ok(Csg::Union(args)),
            "inter" | "intersection" => Ok(Csg::Intersection(args)),
            "diff" | "difference" => {
                if args.len() != 2 {
                    return Err(self.err("diff takes exactly two arguments"));
                }
                let b = args.pop().unwrap();
                let a = args.pop().unwrap();
                Ok(Csg::Difference(Box::new(a), Box::new(b)))
            }
            other => Err(self.err(&format!("unknown operator '{other}'"))),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{c}'")))
        }
    }
}

/// A procedural object: parts combined by a CSG tree, with a color palette.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    pub parts: Vec<AnalyticShape>,
    pub csg: Csg,
    pub palette: BTreeMap<usize, [f64; 3]>,
}

impl SceneSpec {
    /// Union of the given parts with default palette entries for their labels.
    pub fn new(name: impl Into<String>, parts: Vec<AnalyticShape>) -> Result<Self> {
        let csg = Csg::Union((0..parts.len()).map(Csg::Part).collect());
        let mut scene = SceneSpec {
            name: name.into(),
            parts,
            csg,
            palette: BTreeMap::new(),
        };
        scene.fill_default_palette();
        scene.validate()?;
        Ok(scene)
    }

    /// The scene with no parts. It fails [`SceneSpec::validate`] and evaluates
    /// to [`EMPTY_DISTANCE`] everywhere; only useful as "nothing here".
    pub fn empty() -> Self {
        SceneSpec {
            name: "empty".into(),
            parts: Vec::new(),
            csg: Csg::Union(Vec::new()),
            palette: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn sphere(radius: f64) -> Self {
        Self::new("sphere", vec![AnalyticShape::sphere(radius)]).expect("valid sphere")
    }

    pub fn cube(half: f64) -> Self {
        Self::new("box", vec![AnalyticShape::cube(half)]).expect("valid box")
    }

    pub fn with_palette(mut self, label: usize, rgb: [f64; 3]) -> Self {
        self.palette.insert(label, rgb);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() {
            return Err(Error::InvalidScene("scene needs at least one part".into()));
        }
        for part in &self.parts {
            part.kind.validate()?;
        }
        self.csg.check(self.parts.len())?;
        for rgb in self.palette.values() {
            if rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::InvalidScene(format!("palette color {rgb:?} outside [0,1]")));
            }
        }
        Ok(())
    }

    fn fill_default_palette(&mut self) {
        for part in &self.parts {
            let label = part.color_label;
            self.palette
                .entry(label)
                .or_insert(DEFAULT_COLORS[label % DEFAULT_COLORS.len()]);
        }
    }

    pub fn part_sdfs(&self, p: &Vec3) -> Vec<f64> {
        self.parts.iter().map(|s| s.sdf(p)).collect()
    }

    pub fn eval_sdf(&self, p: &Vec3) -> f64 {
        if self.parts.is_empty() {
            return EMPTY_DISTANCE;
        }
        self.csg.eval(&self.part_sdfs(p))
    }

    /// Color of the part whose surface is nearest to `p`.
    pub fn color_at(&self, p: &Vec3) -> [f64; 3] {
        let nearest = self
            .parts
            .iter()
            .min_by(|a, b| a.sdf(p).total_cmp(&b.sdf(p)));
        match nearest {
            Some(part) => self.color_of(part.color_label),
            None => [0.5, 0.5, 0.5],
        }
    }

    pub fn color_of(&self, label: usize) -> [f64; 3] {
        self.palette
            .get(&label)
            .copied()
            .unwrap_or(DEFAULT_COLORS[label % DEFAULT_COLORS.len()])
    }

    pub fn labels(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.parts.iter().map(|p| p.color_label).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut scene = Self::parse(&text)?;
        if scene.name.is_empty() {
            scene.name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scene".into());
        }
        Ok(scene)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut name = String::new();
        let mut csg_src: Option<String> = None;
        let mut palette = BTreeMap::new();
        let mut raw: BTreeMap<usize, BTreeMap<String, (usize, String)>> = BTreeMap::new();

        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: line_no,
                msg: "expected key=value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "name" {
                name = value.to_string();
            } else if key == "csg" {
                csg_src = Some(value.to_string());
            } else if let Some(rest) = key.strip_prefix("palette.") {
                let label: usize = rest.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad palette label '{rest}'"),
                })?;
                let v = parse_vec3(value, line_no)?;
                palette.insert(label, [v.x, v.y, v.z]);
            } else if let Some(rest) = key.strip_prefix("part.") {
                let (idx, field) = rest.split_once('.').ok_or(Error::Parse {
                    line: line_no,
                    msg: format!("expected part.<index>.<field>, got '{key}'"),
                })?;
                let idx: usize = idx.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad part index '{idx}'"),
                })?;
                raw.entry(idx)
                    .or_default()
                    .insert(field.to_string(), (line_no, value.to_string()));
            } else {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown key '{key}'"),
                });
            }
        }

        let mut parts = Vec::new();
        for (expected, (idx, fields)) in raw.iter().enumerate() {
            if *idx != expected {
                return Err(Error::InvalidScene(format!(
                    "part indices must be contiguous from 0; missing part {expected}"
                )));
            }
            parts.push(build_part(*idx, fields)?);
        }
        let csg = match csg_src {
            Some(src) => Csg::parse(&src)?,
            None => Csg::Union((0..parts.len()).map(Csg::Part).collect()),
        };
        let mut scene = SceneSpec {
            name,
            parts,
            csg,
            palette,
        };
        scene.fill_default_palette();
        scene.validate()?;
        Ok(scene)
    }

    /// Serialize back to the scene-file grammar.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.name.is_empty() {
            out.push_str(&format!("name={}\n", self.name));
        }
        for (i, part) in self.parts.iter().enumerate() {
            match &part.kind {
                ShapeKind::Sphere { radius } => {
                    out.push_str(&format!("part.{i}.kind=sphere\npart.{i}.radius={radius}\n"))
                }
                ShapeKind::Box { half_extents: h } => out.push_str(&format!(
                    "part.{i}.kind=box\npart.{i}.half_extents={},{},{}\n",
                    h.x, h.y, h.z
                )),
                ShapeKind::Torus { major, minor } => out.push_str(&format!(
                    "part.{i}.kind=torus\npart.{i}.major={major}\npart.{i}.minor={minor}\n"
                )),
                ShapeKind::Capsule { half_len, radius } => out.push_str(&format!(
                    "part.{i}.kind=capsule\npart.{i}.half_len={half_len}\npart.{i}.radius={radius}\n"
                )),
            }
            let t = part.translation;
            out.push_str(&format!("part.{i}.translate={},{},{}\n", t.x, t.y, t.z));
            let (rx, ry, rz) = part.rotation.euler_angles();
            out.push_str(&format!(
                "part.{i}.rotate={},{},{}\n",
                rx.to_degrees(),
                ry.to_degrees(),
                rz.to_degrees()
            ));
            out.push_str(&format!("part.{i}.label={}\n", part.color_label));
        }
        for (label, c) in &self.palette {
            out.push_str(&format!("palette.{label}={},{},{}\n", c[0], c[1], c[2]));
        }
        out.push_str(&format!("csg={}\n", self.csg));
        out
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("expected a number, got '{s}'"),
    })
}

fn parse_vec3(s: &str, line: usize) -> Result<Vec3> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Parse {
            line,
            msg: format!("expected three comma-separated numbers, got '{s}'"),
        });
    }
    Ok(Vec3::new(
        parse_f64(parts[0], line)?,
        parse_f64(parts[1], line)?,
        parse_f64(parts[2], line)?,
    ))
}

fn build_part(idx: usize, fields: &BTreeMap<String, (usize, String)>) -> Result<AnalyticShape> {
    let get = |name: &str| -> Result<(usize, &str)> {
        fields
            .get(name)
            .map(|(l, v)| (*l, v.as_str()))
            .ok_or_else(|| Error::InvalidScene(format!("part {idx} is missing '{name}'")))
    };
    let num = |name: &str| -> Result<f64> {
        let (l, v) = get(name)?;
        parse_f64(v, l)
    };
    let (kind_line, kind_name) = get("kind")?;
    let kind = match kind_name {
        "sphere" => ShapeKind::Sphere {
            radius: num("radius")?,
        },
        "box" => {
            let (l, v) = get("half_extents")?;
            ShapeKind::Box {
                half_extents: parse_vec3(v, l)?,
            }
        }
        "torus" => ShapeKind::Torus {
            major: num("major")?,
            minor: num("minor")?,
        },
        "capsule" => ShapeKind::Capsule {
            half_len: num("half_len")?,
            radius: num("radius")?,
        },
        other => {
            return Err(Error::Parse {
                line: kind_line,
                msg: format!("unknown shape kind '{other}'"),
            })
        }
    };
    let known = [
        "kind",
        "radius",
        "half_extents",
        "major",
        "minor",
        "half_len",
        "translate",
        "rotate",
        "label",
    ];
    if let Some((field, (line, _))) = fields.iter().find(|(k, _)| !known.contains(&k.as_str())) {
        return Err(Error::Parse {
            line: *line,
            msg: format!("unknown part field '{field}'"),
        });
    }
    let mut shape = AnalyticShape::new(kind).labeled(idx);
    if let Ok((l, v)) = get("translate") {
        shape.translation = parse_vec3(v, l)?;
    }
    if let Ok((l, v)) = get("rotate") {
        let e = parse_vec3(v, l)?;
        let r = Rotation3::from_euler_angles(e.x.to_radians(), e.y.to_radians(), e.z.to_radians());
        shape.rotation = UnitQuaternion::from_rotation_matrix(&r);
    }
    if let Ok((l, v)) = get("label") {
        shape.color_label = v.trim().parse().map_err(|_| Error::Parse {
            line: l,
            msg: format!("bad label '{v}'"),
        })?;
    }
    Ok(shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sphere_center_and_surface() {
        let s = SceneSpec::sphere(0.5);
        assert_eq!(s.eval_sdf(&Vec3::zeros()), -0.5);
        assert_eq!(s.eval_sdf(&Vec3::new(0.5, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn box_corner_distance_matches_dense_surface_search() {
        let b = SceneSpec::cube(0.3);
        let p = Vec3::new(0.5, 0.5, 0.5);
        // Brute force: densely sample the six faces, take the nearest point.
        let steps = 600;
        let mut best = f64::INFINITY;
        for axis in 0..3 {
            for sign in [-0.3, 0.3] {
                for i in 0..=steps {
                    for j in 0..=steps {
                        let u = -0.3 + 0.6 * i as f64 / steps as f64;
                        let v = -0.3 + 0.6 * j as f64 / steps as f64;
                        let mut q = Vec3::zeros();
                        q[axis] = sign;
                        q[(axis + 1) % 3] = u;
                        q[(axis + 2) % 3] = v;
                        best = best.min((q - p).norm());
                    }
                }
            }
        }
        assert!((b.eval_sdf(&p) - best).abs() < 1e-4, "{} vs {best}", b.eval_sdf(&p));
    }

    #[test]
    fn parses_scene_file() {
        let text = "\
name=snowman
part.0.kind=sphere
part.0.radius=0.4
part.0.translate=0,-0.3,0
part.1.kind=sphere
part.1.radius=0.25
part.1.translate=0,0.35,0
part.1.label=1
palette.1=0.1,0.2,0.9   # blue head
csg=union(0,1)
";
        let s = SceneSpec::parse(text).unwrap();
        assert_eq!(s.parts.len(), 2);
        assert_eq!(s.color_of(1), [0.1, 0.2, 0.9]);
        assert!(s.eval_sdf(&Vec3::new(0.0, 0.35, 0.0)) < 0.0);
        let again = SceneSpec::parse(&s.to_text()).unwrap();
        assert_eq!(again.csg, s.csg);
        assert!((again.eval_sdf(&Vec3::new(0.1, 0.2, 0.3)) - s.eval_sdf(&Vec3::new(0.1, 0.2, 0.3))).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_scenes() {
        assert!(SceneSpec::parse("").is_err());
        assert!(SceneSpec::parse("part.0.kind=sphere\npart.0.radius=-1").is_err());
        assert!(SceneSpec::parse("part.0.kind=sphere\npart.0.radius=0.2\ncsg=union(0,3)").is_err());
        assert!(SceneSpec::parse("part.1.kind=sphere\npart.1.radius=0.2").is_err());
        assert!(SceneSpec::parse("bogus=1").is_err());
        assert!(Csg::parse("diff(0)").is_err());
    }

    fn two_part_scene(op: &str) -> SceneSpec {
        SceneSpec::parse(&format!(
            "part.0.kind=sphere\npart.0.radius=0.4\npart.1.kind=box\npart.1.half_extents=0.3,0.2,0.5\npart.1.translate=0.2,0,0\ncsg={op}(0,1)"
        ))
        .unwrap()
    }

    proptest! {
        #[test]
        fn union_is_min_and_intersection_is_max(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64) {
            let p = Vec3::new(x, y, z);
            let u = two_part_scene("union");
            let i = two_part_scene("inter");
            let parts = u.part_sdfs(&p);
            prop_assert_eq!(u.eval_sdf(&p), parts[0].min(parts[1]));
            prop_assert_eq!(i.eval_sdf(&p), parts[0].max(parts[1]));
        }

        #[test]
        fn rigid_transform_commutes_with_sdf(
            x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64,
            ax in -3.0..3.0f64, ay in -3.0..3.0f64, az in -3.0..3.0f64,
        ) {
            let rot = UnitQuaternion::from_euler_angles(ax, ay, az);
            let t = Vec3::new(0.1, -0.2, 0.05);
            let base = AnalyticShape::new(ShapeKind::Torus { major: 0.4, minor: 0.1 });
            let moved = base.clone().rotated(rot).translated(t);
            let p = Vec3::new(x, y, z);
            let q = rot * p + t;
            prop_assert!((moved.sdf(&q) - base.sdf(&p)).abs() < 1e-6);
        }
    }
}
