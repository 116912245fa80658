//! Pipeline stages over files. Every stage writes its artifacts and a
//! manifest holding `config.*`, `input.*`, `output.*.sha256`, `result.*`
//! and `timing.*` keys; [`replay`] reruns a stage from its manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::dataset::{gen_dataset, DatasetSpec};
use crate::distill::{density_to_sdf, distill, render_colors, sds_refine, DistillConfig, RefineConfig, ViewOracle};
use crate::geometry::{bake_colors, bake_grid, extract_mesh, SceneSpec, SdfGrid};
use crate::io::{
    ensure_dir, load_colors, load_field, load_sdf, load_views, save_colors, save_field, save_prior, save_sdf,
    save_views, sha256_file, write_previews,
};
use crate::metrics::{metric_chamfer, metric_iou, metric_multiview_consistency, metric_psnr, MetricReport};
use crate::pipeline::{scene_views, OracleSetup, RunConfig};
use crate::render::views::view_seed;
use crate::render::{
    field_from_grid, make_camera_ring, render_view, CameraPose, MultiViewSet, RadianceField, RenderConfig, RenderedView,
    SDensityParams,
};
use crate::sampler::{run_sampler, SAMPLER_KEYS};
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";
/// Magnitude cap of the SDF recovered from a hi-res field.
pub const FIELD_SDF_CAP: f64 = 0.3;
/// Surface samples per mesh for the Chamfer metric.
pub const CHAMFER_SAMPLES: usize = 2000;

/// Manifest written beside a file output: `dir/stem.manifest.txt`.
pub fn manifest_path_for(file: &Path) -> PathBuf {
    let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    file.with_file_name(format!("{stem}.manifest.txt"))
}

/// Manifest with timing keys removed; equal across reruns.
pub fn without_timing(kv: &KeyValues) -> KeyValues {
    kv.without_prefix("timing.")
}

fn record_outputs(m: &mut KeyValues, dir: &Path, files: &[&str]) -> Result<()> {
    for f in files {
        m.set(format!("output.{f}.sha256"), sha256_file(&dir.join(f))?);
    }
    Ok(())
}

fn check_hash(m: &KeyValues, path_key: &str, hash_key: &str) -> Result<PathBuf> {
    let path = PathBuf::from(required(m, path_key)?);
    if let Some(expected) = m.get_str(hash_key) {
        let got = sha256_file(&path)?;
        if got != expected {
            return Err(Error::Format {
                path,
                msg: format!("content hash {got} differs from the manifest's {expected}"),
            });
        }
    }
    Ok(path)
}

fn required<'a>(m: &'a KeyValues, key: &str) -> Result<&'a str> {
    m.get_str(key)
        .ok_or_else(|| Error::InvalidParameter(format!("manifest is missing '{key}'")))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn parent(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Run the sampler on one scene and write `f0.sdfg`, `colors.sdfg`,
/// `v0.mvws`, `mesh.obj`, `prior.sdfg`, `snapshots/` and `trajectory.txt`.
pub fn sample_stage(scene_path: &Path, cfg: &RunConfig, out: &Path) -> Result<KeyValues> {
    let start = Instant::now();
    let scene = SceneSpec::load(scene_path)?;
    let setup = OracleSetup::build(&scene, cfg)?;
    let output = run_sampler(&cfg.sampler, &setup.inputs())?;
    ensure_dir(out)?;
    let n = cfg.resolution;
    save_sdf(&out.join("f0.sdfg"), &output.f0)?;
    save_colors(&out.join("colors.sdfg"), &output.colors)?;
    save_views(&out.join("v0.mvws"), &output.v0)?;
    write_previews(out, "v0", &output.v0)?;
    let mesh = extract_mesh(&output.f0, 0.0);
    mesh.write_obj(&out.join("mesh.obj"))?;
    let mut files = vec!["f0.sdfg", "colors.sdfg", "v0.mvws", "mesh.obj", "trajectory.txt"];
    if let Some(prior) = &setup.prior {
        save_prior(&out.join("prior.sdfg"), prior)?;
        files.push("prior.sdfg");
    }
    let snaps = out.join("snapshots");
    ensure_dir(&snaps)?;
    let mut traj = KeyValues::new();
    traj.set("every", output.trajectory.every);
    for r in &output.trajectory.records {
        traj.set(format!("step.{:04}.eps3d_rms", r.t), r.eps3d_rms);
        traj.set(format!("step.{:04}.eps2d_rms", r.t), r.eps2d_rms);
        traj.set(format!("step.{:04}.f0_inside", r.t), r.f0_inside);
    }
    for s in &output.trajectory.snapshots {
        let t = s.state.t;
        save_sdf(&snaps.join(format!("t{t:04}_f.sdfg")), &SdfGrid::from_values(n, s.state.f.clone())?)?;
        save_sdf(&snaps.join(format!("t{t:04}_f0_pred.sdfg")), &SdfGrid::from_values(n, s.f0_pred.clone())?)?;
        save_views(&snaps.join(format!("t{t:04}_v.mvws")), &s.state.v)?;
        traj.set(format!("snapshot.{t:04}"), format!("t{t:04}"));
    }
    traj.save(&out.join("trajectory.txt"))?;

    let mut m = KeyValues::new();
    m.set("stage", "sample");
    m.set_section("config", &cfg.to_kv());
    m.set("input.scene", scene_path.display());
    m.set("input.scene_sha256", sha256_file(scene_path)?);
    for k in output.manifest.keys().filter(|k| !SAMPLER_KEYS.contains(k)) {
        let v = output.manifest.get_str(k).unwrap_or("");
        if k.starts_with("timing.") {
            m.set(k, v);
        } else {
            m.set(format!("result.{k}"), v);
        }
    }
    m.set("result.mesh_empty", mesh.is_empty());
    record_outputs(&mut m, out, &files)?;
    m.set("timing.stage_seconds", format!("{:.3}", start.elapsed().as_secs_f64()));
    m.save(&out.join(MANIFEST))?;
    Ok(m)
}

fn run_manifest(run_dir: &Path) -> Result<KeyValues> {
    KeyValues::load(&run_dir.join(MANIFEST))
}

fn run_density(m: &KeyValues) -> Result<SDensityParams> {
    SDensityParams::new(m.get_or("config.render.s", SDensityParams::default().s)?)
}

/// Distill the run's F0 into a hi-res field at `out`, with a mesh at
/// `<stem>.obj`, a loss log at `<stem>.losses.txt` and the manifest.
pub fn distill_stage(run_dir: &Path, cfg: &DistillConfig, seed: u64, out: &Path) -> Result<KeyValues> {
    let start = Instant::now();
    let params = run_density(&run_manifest(run_dir)?)?;
    let f0 = load_sdf(&run_dir.join("f0.sdfg"))?;
    let colors = load_colors(&run_dir.join("colors.sdfg"))?;
    let source = field_from_grid(&f0, &colors, params);
    let (field, report) = distill(&source, params, cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let dir = parent(out);
    ensure_dir(dir)?;
    save_field(out, &field)?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("field").to_string();
    let mesh_name = format!("{stem}.obj");
    extract_mesh(&density_to_sdf(&field, FIELD_SDF_CAP), 0.0).write_obj(&dir.join(&mesh_name))?;
    let mut losses = KeyValues::new();
    for (i, ((d, r), t)) in report.density_l1.iter().zip(&report.render_l1).zip(&report.total).enumerate() {
        losses.set(format!("iter.{i:05}"), format!("{d},{r},{t}"));
    }
    let loss_name = format!("{stem}.losses.txt");
    losses.save(&dir.join(&loss_name))?;

    let mut m = KeyValues::new();
    m.set("stage", "distill");
    let mut config = cfg.to_kv();
    config.set("distill.seed", seed);
    config.set("render.s", params.s);
    m.set_section("config", &config);
    m.set("input.run", run_dir.display());
    m.set("input.f0_sha256", sha256_file(&run_dir.join("f0.sdfg"))?);
    m.set("input.colors_sha256", sha256_file(&run_dir.join("colors.sdfg"))?);
    m.set("result.masked_nodes", report.masked_nodes);
    m.set("result.iterations", report.iterations);
    m.set("result.halvings", report.halvings);
    m.set("result.final_step", report.final_step);
    m.set("result.final_density_l1", report.final_density_l1());
    m.set("result.final_render_l1", report.render_l1.last().copied().unwrap_or(f64::NAN));
    record_outputs(&mut m, dir, &[&file_name(out), &mesh_name, &loss_name])?;
    m.set("timing.distill_seconds", format!("{:.3}", report.seconds));
    m.set("timing.stage_seconds", format!("{:.3}", start.elapsed().as_secs_f64()));
    m.save(&manifest_path_for(out))?;
    Ok(m)
}

/// Refine a hi-res field against a view set; by default the `v0.mvws` of
/// the run the field was distilled from.
pub fn refine_stage(field_path: &Path, views: Option<&Path>, cfg: &RefineConfig, seed: u64, out: &Path) -> Result<KeyValues> {
    let start = Instant::now();
    let field_manifest = KeyValues::load(&manifest_path_for(field_path)).ok();
    let params = match &field_manifest {
        Some(m) => run_density(m)?,
        None => SDensityParams::default(),
    };
    let views_path = match views {
        Some(p) => p.to_path_buf(),
        None => {
            let m = field_manifest.as_ref().ok_or_else(|| {
                Error::InvalidParameter(format!("no manifest beside {}; pass the views explicitly", field_path.display()))
            })?;
            let run = m.get_str("input.run").or_else(|| m.get_str("input.views_run")).ok_or_else(|| {
                Error::InvalidParameter("field manifest names no run; pass the views explicitly".into())
            })?;
            PathBuf::from(run).join("v0.mvws")
        }
    };
    let field = load_field(field_path, params)?;
    let v0 = load_views(&views_path)?;
    let (refined, report) = sds_refine(
        &field,
        &ViewOracle { views: &v0 },
        v0.poses(),
        cfg,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )?;
    let dir = parent(out);
    ensure_dir(dir)?;
    save_field(out, &refined)?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("field").to_string();
    let mesh_name = format!("{stem}.obj");
    extract_mesh(&density_to_sdf(&refined, FIELD_SDF_CAP), 0.0).write_obj(&dir.join(&mesh_name))?;

    let mut m = KeyValues::new();
    m.set("stage", "refine");
    let mut config = cfg.to_kv();
    config.set("refine.seed", seed);
    config.set("render.s", params.s);
    m.set_section("config", &config);
    m.set("input.field", field_path.display());
    m.set("input.field_sha256", sha256_file(field_path)?);
    m.set("input.views", views_path.display());
    m.set("input.views_sha256", sha256_file(&views_path)?);
    if let Some(run) = field_manifest.as_ref().and_then(|m| m.get_str("input.run")) {
        m.set("input.views_run", run);
    }
    m.set("result.iterations", report.iterations);
    m.set("result.init_density_l1", report.init_density_l1);
    let mean_rms = report.residual_rms.iter().sum::<f64>() / report.residual_rms.len().max(1) as f64;
    m.set("result.mean_residual_rms", mean_rms);
    record_outputs(&mut m, dir, &[&file_name(out), &mesh_name])?;
    m.set("timing.refine_seconds", format!("{:.3}", report.seconds));
    m.set("timing.stage_seconds", format!("{:.3}", start.elapsed().as_secs_f64()));
    m.save(&manifest_path_for(out))?;
    Ok(m)
}

/// What to render: a sampler run (F0 and colors) or a hi-res field file.
#[derive(Debug, Clone, PartialEq)]
pub enum RenderSource {
    Run(PathBuf),
    Field(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderRequest {
    pub count: usize,
    pub elevation: f64,
    pub radius: f64,
    pub fov: f64,
    pub size: usize,
    pub samples: usize,
    pub near: f64,
    pub far: f64,
    pub background: [f64; 3],
    /// S-density sharpness; the input's own value when unset.
    pub s: Option<f64>,
    pub seed: u64,
}

impl Default for RenderRequest {
    fn default() -> Self {
        let r = RenderConfig::default();
        RenderRequest {
            count: 8,
            elevation: 30.0,
            radius: 3.0,
            fov: 40.0,
            size: 64,
            samples: 64,
            near: r.t_near,
            far: r.t_far,
            background: r.background,
            s: None,
            seed: 0,
        }
    }
}

/// Depth PGM stores `depth / DEPTH_SCALE` over the 16-bit range.
pub const DEPTH_SCALE: f64 = 8.0;

pub fn parse_rgb(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidParameter(format!("bad color '{s}'")))?;
    match v[..] {
        [r, g, b] => Ok([r, g, b]),
        _ => Err(Error::InvalidParameter(format!("color '{s}' needs three components"))),
    }
}

impl RenderRequest {
    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            samples: self.samples,
            t_near: self.near,
            t_far: self.far,
            background: self.background,
        }
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("render.count", self.count);
        kv.set("render.elevation", self.elevation);
        kv.set("render.radius", self.radius);
        kv.set("render.fov", self.fov);
        kv.set("render.size", self.size);
        kv.set("render.samples", self.samples);
        kv.set("render.near", self.near);
        kv.set("render.far", self.far);
        let [r, g, b] = self.background;
        kv.set("render.background", format!("{r},{g},{b}"));
        if let Some(s) = self.s {
            kv.set("render.s_override", s);
        }
        kv.set("render.seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = RenderRequest::default();
        Ok(RenderRequest {
            count: kv.get_or("render.count", d.count)?,
            elevation: kv.get_or("render.elevation", d.elevation)?,
            radius: kv.get_or("render.radius", d.radius)?,
            fov: kv.get_or("render.fov", d.fov)?,
            size: kv.get_or("render.size", d.size)?,
            samples: kv.get_or("render.samples", d.samples)?,
            near: kv.get_or("render.near", d.near)?,
            far: kv.get_or("render.far", d.far)?,
            background: kv.get_str("render.background").map(parse_rgb).transpose()?.unwrap_or(d.background),
            s: kv.get("render.s_override")?,
            seed: kv.get_or("render.seed", d.seed)?,
        })
    }
}

fn field_density(path: &Path, fallback: SDensityParams) -> Result<SDensityParams> {
    match KeyValues::load(&manifest_path_for(path)) {
        Ok(m) => run_density(&m),
        Err(_) => Ok(fallback),
    }
}

fn render_all<F: RadianceField + ?Sized>(field: &F, poses: &[CameraPose], cfg: &RenderConfig, seed: u64) -> Result<Vec<RenderedView>> {
    poses
        .iter()
        .enumerate()
        .map(|(k, p)| render_view(field, p, cfg, view_seed(seed, k)))
        .collect()
}

/// Render a camera ring of `source` into `out/renders.mvws` with
/// `render_KK.ppm`, `render_KK_depth.pgm` and `render_KK_trans.pgm` per view.
pub fn render_stage(source: &RenderSource, req: &RenderRequest, out: &Path) -> Result<KeyValues> {
    let start = Instant::now();
    let poses = make_camera_ring(req.count, req.elevation, req.radius, req.fov, req.size, req.size)?;
    let cfg = req.render_config();
    let mut m = KeyValues::new();
    m.set("stage", "render");
    let rendered = match source {
        RenderSource::Run(dir) => {
            let params = match req.s {
                Some(s) => SDensityParams::new(s)?,
                None => run_density(&run_manifest(dir)?)?,
            };
            let (g, c) = (load_sdf(&dir.join("f0.sdfg"))?, load_colors(&dir.join("colors.sdfg"))?);
            m.set("input.run", dir.display());
            m.set("input.f0_sha256", sha256_file(&dir.join("f0.sdfg"))?);
            m.set("result.s", params.s);
            render_all(&field_from_grid(&g, &c, params), &poses, &cfg, req.seed)?
        }
        RenderSource::Field(path) => {
            let params = match req.s {
                Some(s) => SDensityParams::new(s)?,
                None => field_density(path, SDensityParams::default())?,
            };
            let field = load_field(path, params)?;
            m.set("input.field", path.display());
            m.set("input.field_sha256", sha256_file(path)?);
            m.set("result.s", params.s);
            render_all(&field, &poses, &cfg, req.seed)?
        }
    };
    ensure_dir(out)?;
    let views = MultiViewSet::new(poses, rendered.iter().map(RenderedView::rgbs).collect())?;
    save_views(&out.join("renders.mvws"), &views)?;
    write_previews(out, "render", &views)?;
    for (k, r) in rendered.iter().enumerate() {
        r.depth.write_pgm16(0, DEPTH_SCALE, &out.join(format!("render_{k:02}_depth.pgm")))?;
        r.transmittance.write_pgm16(0, 1.0, &out.join(format!("render_{k:02}_trans.pgm")))?;
    }
    m.set_section("config", &req.to_kv());
    m.set("result.depth_scale", DEPTH_SCALE);
    record_outputs(&mut m, out, &["renders.mvws"])?;
    m.set("timing.stage_seconds", format!("{:.3}", start.elapsed().as_secs_f64()));
    m.save(&out.join(MANIFEST))?;
    Ok(m)
}

fn mean_psnr_against<F: RadianceField + ?Sized>(field: &F, views: &MultiViewSet, cfg: &RenderConfig, seed: u64) -> Result<Vec<f64>> {
    views
        .poses()
        .iter()
        .enumerate()
        .map(|(k, pose)| metric_psnr(&render_colors(field, pose, cfg, seed)?, &views.rgb(k)))
        .collect()
}

/// Geometry and view metrics of a run against its ground-truth scene, plus
/// the hi-res field when given. The report is written to `out`.
pub fn metrics_stage(run_dir: &Path, scene: Option<&Path>, field: Option<&Path>, out: &Path) -> Result<MetricReport> {
    let start = Instant::now();
    let rm = run_manifest(run_dir)?;
    let cfg = RunConfig::from_kv(&rm.section("config"), &[])?;
    let scene_path = match scene {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(required(&rm, "input.scene")?),
    };
    let spec = SceneSpec::load(&scene_path)?;
    let n = cfg.resolution;
    let f0 = load_sdf(&run_dir.join("f0.sdfg"))?;
    let colors = load_colors(&run_dir.join("colors.sdfg"))?;
    let v0 = load_views(&run_dir.join("v0.mvws"))?;
    let gt = bake_grid(&spec, n)?;
    let density = cfg.sampler.density;
    let render = cfg.render_config();

    let mut report = MetricReport::default();
    report.set("iou", metric_iou(&f0, &gt, 0.0)?);
    let (mesh, gt_mesh) = (extract_mesh(&f0, 0.0), extract_mesh(&gt, 0.0));
    if !mesh.is_empty() && !gt_mesh.is_empty() {
        report.set(
            "chamfer",
            metric_chamfer(&mesh, &gt_mesh, CHAMFER_SAMPLES, &mut ChaCha8Rng::seed_from_u64(0))?,
        );
    }
    let consistency = metric_multiview_consistency(&v0, &f0, &colors, density, &render, cfg.views.seed)?;
    report.set("consistency_psnr", consistency.mean_psnr);
    report.set("reprojection_error", consistency.reprojection_error);
    report.per_view.insert(
        "consistency_psnr".into(),
        consistency.per_view_psnr.iter().map(|p| p.min(crate::metrics::PSNR_CAP)).collect(),
    );
    let gt_views = scene_views(&spec, n, v0.poses(), &cfg)?;
    let v0_gt: Vec<f64> = (0..v0.len())
        .map(|k| metric_psnr(&v0.rgb(k), &gt_views.rgb(k)).map(|p| p.min(crate::metrics::PSNR_CAP)))
        .collect::<Result<_>>()?;
    report.set("v0_gt_psnr", v0_gt.iter().sum::<f64>() / v0_gt.len() as f64);
    report.per_view.insert("v0_gt_psnr".into(), v0_gt);

    let mut m = KeyValues::new();
    m.set("stage", "metrics");
    m.set("input.run", run_dir.display());
    m.set("input.scene", scene_path.display());
    m.set("input.f0_sha256", sha256_file(&run_dir.join("f0.sdfg"))?);
    if let Some(fp) = field {
        let params = field_density(fp, density)?;
        let hf = load_field(fp, params)?;
        let gt_h = bake_grid(&spec, hf.resolution())?;
        report.set("field_iou", metric_iou(&density_to_sdf(&hf, FIELD_SDF_CAP), &gt_h, 0.0)?);
        let hi_views = {
            let c = bake_colors(&spec, n)?;
            MultiViewSet::render(&field_from_grid(&gt, &c, density), v0.poses(), &render, cfg.views.seed)?
        };
        let psnrs = mean_psnr_against(&hf, &hi_views, &render, cfg.views.seed)?;
        report.set("field_gt_psnr", psnrs.iter().map(|p| p.min(crate::metrics::PSNR_CAP)).sum::<f64>() / psnrs.len() as f64);
        m.set("input.field", fp.display());
        m.set("input.field_sha256", sha256_file(fp)?);
    }
    report.config_hash = cfg.to_kv().hash();
    m = m.merged(&report.to_kv());
    m.set(
        "report.note",
        "consistency_psnr is the operational 2D-3D consistency substitute for CLIP R-precision",
    );
    m.set("timing.stage_seconds", format!("{:.3}", start.elapsed().as_secs_f64()));
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    m.save(out)?;
    Ok(report)
}

/// Rerun the stage recorded in `manifest` with outputs at `out` (a
/// directory for dataset, sample and render stages; a file otherwise).
pub fn replay(manifest: &Path, out: &Path) -> Result<KeyValues> {
    let m = KeyValues::load(manifest)?;
    let cfg = m.section("config");
    match required(&m, "stage")? {
        "gen-dataset" => gen_dataset(&DatasetSpec::from_kv(&cfg)?, out),
        "sample" => {
            let scene = check_hash(&m, "input.scene", "input.scene_sha256")?;
            sample_stage(&scene, &RunConfig::from_kv(&cfg, &[])?, out)
        }
        "distill" => {
            let run = PathBuf::from(required(&m, "input.run")?);
            let seed = cfg.get_or("distill.seed", 0u64)?;
            distill_stage(&run, &DistillConfig::from_kv(&cfg)?, seed, out)
        }
        "refine" => {
            let field = check_hash(&m, "input.field", "input.field_sha256")?;
            let views = check_hash(&m, "input.views", "input.views_sha256")?;
            let seed = cfg.get_or("refine.seed", 0u64)?;
            refine_stage(&field, Some(&views), &RefineConfig::from_kv(&cfg)?, seed, out)
        }
        "render" => {
            let source = match (m.get_str("input.run"), m.get_str("input.field")) {
                (Some(r), _) => RenderSource::Run(r.into()),
                (None, Some(f)) => RenderSource::Field(f.into()),
                _ => return Err(Error::InvalidParameter("render manifest names no input".into())),
            };
            render_stage(&source, &RenderRequest::from_kv(&cfg)?, out)
        }
        "metrics" => {
            let run = PathBuf::from(required(&m, "input.run")?);
            let scene = PathBuf::from(required(&m, "input.scene")?);
            let field = m.get_str("input.field").map(PathBuf::from);
            metrics_stage(&run, Some(&scene), field.as_deref(), out)?;
            KeyValues::load(out)
        }
        other => Err(Error::InvalidParameter(format!("unknown stage '{other}'"))),
    }
}
