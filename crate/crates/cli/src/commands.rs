use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use macect::fbp::{fbp_reconstruct, FbpConfig};
use macect::io::{read_sinogram, read_volume, sinogram_header, write_sinogram, write_volume};
use macect::mace::MaceConfig;
use macect::mbir::{qggmrf_reconstruct, ForwardModelTerm, QggmrfOptions, QggmrfPrior};
use macect::metrics::{evaluate, MetricReport};
use macect::phantom::{add_noise, make_cracked_cylinder, NoiseModel, PhantomSpec};
use macect::projector::forward_project;
use macect::{Grid, Sinogram, Volume};
use serde::{Deserialize, Serialize};

use crate::config::{load_geometry_spec, load_phantom_spec, Method, RunConfig};
use crate::error::{CliError, CliResult};
use crate::export::{ensure_dir, export_slices, relative_names, write_json, write_text, Window};
use crate::pipeline::{prepare, run_method};

pub const MANIFEST: &str = "manifest.json";
pub const CONVERGENCE_CSV: &str = "convergence.csv";

/// Everything a finished run wrote, plus the effective configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<Window>,
    pub files: Vec<String>,
}

impl Manifest {
    fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config,
            window: None,
            files: Vec::new(),
        }
    }

    fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(MANIFEST);
        write_json(&path, self)?;
        Ok(path)
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("configuration types serialize to json")
}

/// What `phantom` wrote.
#[derive(Clone, Debug)]
pub struct PhantomSummary {
    pub path: PathBuf,
    pub dims: [usize; 3],
    pub n_cracks: usize,
    pub crack_labels: Vec<u8>,
}

impl PhantomSummary {
    pub fn describe(&self) -> String {
        let [nx, ny, nz] = self.dims;
        let labels: Vec<String> = self.crack_labels.iter().map(|l| l.to_string()).collect();
        format!(
            "phantom {nx}x{ny}x{nz} -> {}\n{} cracks{}",
            self.path.display(),
            self.n_cracks,
            if labels.is_empty() { String::new() } else { format!(" (labels {})", labels.join(", ")) }
        )
    }
}

/// Builds the phantom of `spec_path` (the default phantom when `None`) and writes it to `out`.
pub fn cmd_phantom(spec_path: Option<&Path>, out: &Path) -> CliResult<PhantomSummary> {
    let spec: PhantomSpec = load_phantom_spec(spec_path)?;
    let volume = make_cracked_cylinder(&spec)?;
    create_parent(out)?;
    write_volume(out, &volume)?;
    let mut crack_labels: Vec<u8> = spec.cracks.iter().map(|c| c.label).collect();
    crack_labels.extend(spec.concentric_crack.iter().map(|c| c.label));
    let dir = out.parent().unwrap_or(Path::new("."));
    let mut manifest = Manifest::new("phantom", None, to_value(&spec));
    manifest.files = relative_names(dir, &[out.to_path_buf()]);
    manifest.write(dir)?;
    Ok(PhantomSummary {
        path: out.to_path_buf(),
        dims: spec.dims,
        n_cracks: spec.n_cracks(),
        crack_labels,
    })
}

/// Projects the volume at `volume_path`, adds seeded noise and writes the sinogram.
pub fn cmd_project(
    volume_path: &Path,
    geometry_path: Option<&Path>,
    noise: &NoiseModel,
    out: &Path,
) -> CliResult<Sinogram> {
    let volume = read_volume(volume_path)?;
    let geometry = load_geometry_spec(geometry_path)?.build(volume.grid())?;
    let clean = forward_project(&volume, &geometry)?;
    let noisy = add_noise(&clean, noise)?;
    let mut header = sinogram_header(&noisy);
    header.seed = Some(noise.seed);
    header.noise_level = Some(noise.relative_level);
    create_parent(out)?;
    write_sinogram(out, &noisy, header)?;
    let dir = out.parent().unwrap_or(Path::new("."));
    let mut manifest = Manifest::new(
        "project",
        Some(noise.seed),
        serde_json::json!({ "volume": volume_path, "geometry": geometry, "noise": noise }),
    );
    manifest.files = relative_names(dir, &[out.to_path_buf()]);
    manifest.write(dir)?;
    Ok(noisy)
}

/// Reconstruction grid for a loaded sinogram: the grid of `like` when given,
/// otherwise the default phantom grid with the sinogram's slice count.
pub fn target_grid(like: Option<&Path>, sinogram: &Sinogram) -> CliResult<Grid> {
    let grid = match like {
        Some(p) => *read_volume(p)?.grid(),
        None => {
            let g = load_phantom_spec(None)?.grid();
            Grid::new(g.nx, g.ny, sinogram.geometry().n_slices).with_pitch(g.voxel_pitch, g.slice_pitch)
        }
    };
    sinogram.geometry().check_compatible(&grid)?;
    Ok(grid)
}

/// Filtered back projection of a stored sinogram.
pub fn cmd_fbp(sinogram_path: &Path, like: Option<&Path>, cfg: &FbpConfig, out: &Path) -> CliResult<Volume> {
    let (s, _) = read_sinogram(sinogram_path)?;
    let grid = target_grid(like, &s)?;
    let volume = fbp_reconstruct(&s, s.geometry(), &grid, cfg)?;
    create_parent(out)?;
    write_volume(out, &volume)?;
    let dir = out.parent().unwrap_or(Path::new("."));
    let mut manifest = Manifest::new("fbp", None, serde_json::json!({ "sinogram": sinogram_path, "fbp": cfg }));
    manifest.files = relative_names(dir, &[out.to_path_buf()]);
    manifest.write(dir)?;
    Ok(volume)
}

/// qGGMRF reconstruction of a stored sinogram, started from an apodized FBP.
pub fn cmd_mbir(
    sinogram_path: &Path,
    like: Option<&Path>,
    prior: &QggmrfPrior,
    opts: &QggmrfOptions,
    alpha: f64,
    init_apodization: Option<f64>,
    out: &Path,
) -> CliResult<Volume> {
    let (s, _) = read_sinogram(sinogram_path)?;
    let grid = target_grid(like, &s)?;
    let init_cfg = FbpConfig {
        apodization: init_apodization,
        ..Default::default()
    };
    let init = fbp_reconstruct(&s, s.geometry(), &grid, &init_cfg)?;
    let fm = ForwardModelTerm::new(s, alpha)?;
    let result = qggmrf_reconstruct(&fm, prior, &init, opts)?;
    create_parent(out)?;
    write_volume(out, &result.volume)?;
    let dir = out.parent().unwrap_or(Path::new("."));
    let costs = dir.join("costs.csv");
    let mut text = String::from("pass,cost\n");
    for (k, c) in result.costs.iter().enumerate() {
        let _ = writeln!(text, "{k},{c:.12e}");
    }
    write_text(&costs, &text)?;
    let mut manifest = Manifest::new(
        "mbir",
        None,
        serde_json::json!({
            "sinogram": sinogram_path,
            "prior": prior,
            "options": opts,
            "alpha": alpha,
            "init_apodization": init_apodization,
        }),
    );
    manifest.files = relative_names(dir, &[out.to_path_buf(), costs]);
    manifest.write(dir)?;
    Ok(result.volume)
}

/// Outcome of `reconstruct`.
#[derive(Clone, Debug)]
pub struct ReconstructSummary {
    pub method: Method,
    pub volume_path: PathBuf,
    pub final_residual: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub metrics: Option<MetricReport>,
    pub seconds: f64,
}

impl ReconstructSummary {
    pub fn describe(&self) -> String {
        let mut s = format!("{} -> {} ({:.1}s)", self.method, self.volume_path.display(), self.seconds);
        if let (Some(r), Some(n), Some(c)) = (self.final_residual, self.iterations, self.converged) {
            let _ = write!(s, "\nresidual {r:.4e} after {n} iterations{}", if c { "" } else { " (not converged)" });
        }
        if let Some(m) = &self.metrics {
            let _ = write!(s, "\nNRMSE {:.4}  SSIM {:.4}", m.nrmse, m.ssim);
        }
        s
    }
}

/// Effective consensus settings recorded in the manifest, with σ resolved.
#[derive(Clone, Debug, Serialize)]
struct ResolvedConsensus {
    #[serde(flatten)]
    mace: MaceConfig,
    sigma_resolved: f64,
}

/// Runs the configured method end to end and writes the result volume,
/// convergence CSV (consensus methods), PNG slices and manifest into `cfg.out_dir`.
pub fn cmd_reconstruct(cfg: &RunConfig) -> CliResult<ReconstructSummary> {
    cfg.validate()?;
    let scenario = prepare(cfg)?;
    let dir = cfg.out_dir.clone();
    ensure_dir(&dir)?;
    let mut files = Vec::new();
    if cfg.sinogram.is_none() {
        let path = dir.join("sinogram.raw");
        let mut header = sinogram_header(&scenario.sinogram);
        header.seed = Some(cfg.seed);
        header.noise_level = Some(cfg.noise.relative_level);
        write_sinogram(&path, &scenario.sinogram, header)?;
        files.push(path);
    }

    let mut manifest = Manifest::new("reconstruct", Some(cfg.seed), to_value(cfg));
    let output = match run_method(cfg.method, cfg, &scenario, None) {
        Ok(o) => o,
        Err(CliError::Diverged { message, log }) => {
            let path = dir.join(CONVERGENCE_CSV);
            log.write_csv(&path)?;
            return Err(CliError::Numerical {
                message,
                log: Some(path),
            });
        }
        Err(e) => return Err(e),
    };
    info!("{} finished in {:.1}s", cfg.method, output.seconds);

    let volume_path = dir.join(format!("{}.raw", cfg.method));
    write_volume(&volume_path, &output.volume)?;
    files.push(volume_path.clone());
    if let Some(log) = &output.log {
        let path = dir.join(CONVERGENCE_CSV);
        log.write_csv(&path)?;
        files.push(path);
        let mace = cfg.mace_config(cfg.method);
        let resolved = ResolvedConsensus {
            sigma_resolved: output.sigma.unwrap_or(f64::NAN),
            mace,
        };
        if let serde_json::Value::Object(map) = &mut manifest.config {
            map.insert("effective_mace".into(), to_value(&resolved));
        }
    }
    let window = Window::choose(&output.volume, scenario.truth.as_ref());
    files.extend(export_slices(&dir, &output.volume, &cfg.png_slices, &window)?);
    let metrics = match &scenario.truth {
        Some(t) => {
            let report = evaluate(&output.volume, t)?;
            let path = dir.join("metrics.json");
            write_json(&path, &report)?;
            files.push(path);
            Some(report)
        }
        None => None,
    };
    manifest.window = Some(window);
    manifest.files = relative_names(&dir, &files);
    manifest.write(&dir)?;
    Ok(ReconstructSummary {
        method: cfg.method,
        volume_path,
        final_residual: output.log.as_ref().and_then(|l| l.final_residual()),
        iterations: output.log.as_ref().map(|l| l.iterations()),
        converged: output.log.as_ref().map(|l| l.converged),
        metrics,
        seconds: output.seconds,
    })
}

/// One row of the metrics table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub name: String,
    pub path: PathBuf,
    pub report: MetricReport,
}

/// Scores every reconstruction against `truth`, keeping the given order.
pub fn cmd_evaluate(recons: &[(String, PathBuf)], truth_path: &Path) -> CliResult<Vec<EvaluationRow>> {
    let truth = read_volume(truth_path)?;
    recons
        .iter()
        .map(|(name, path)| {
            let v = read_volume(path)?;
            if !v.same_shape(&truth) {
                return Err(CliError::Config(format!(
                    "{}: dims {:?} do not match truth {:?}",
                    path.display(),
                    v.dims(),
                    truth.dims()
                )));
            }
            Ok(EvaluationRow {
                name: name.clone(),
                path: path.clone(),
                report: evaluate(&v, &truth)?,
            })
        })
        .collect()
}

/// Text table with one row per reconstruction.
pub fn metrics_table(rows: &[EvaluationRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:<width$}  {:>8}  {:>8}\n", "Method", "NRMSE", "SSIM");
    let _ = writeln!(s, "{}", "-".repeat(width + 20));
    for r in rows {
        let _ = writeln!(s, "{:<width$}  {:>8.4}  {:>8.4}", r.name, r.report.nrmse, r.report.ssim);
    }
    s
}

/// Label for a reconstruction path: the file stem (`msf-ri.raw` gives `msf-ri`).
pub fn label_for(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match stem.parse::<Method>() {
        Ok(m) => m.title().to_string(),
        Err(_) => stem,
    }
}

fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}
