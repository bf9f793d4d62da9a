//! Subcommand implementations.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use esl::cryoem::{blur_volume, generate_dataset, phantom as make_phantom, CtfParams, ForwardModel, ImageStack, Volume, REFERENCE_BOX_NM};
use esl::error::RefineError;
use esl::esl::EslConfig;
use esl::formats::{
    images_to_tensor, read_eslt_file, read_rotations_file, tensor_to_images, tensor_to_volume, volume_to_tensor,
    write_eslt_file, write_key_values, write_rotations_file, write_weights, MetricsWriter,
};
use esl::manifold::Rotation;
use esl::metrics::{align_rotations, euler_zyz};
use esl::refine::{
    default_parameters, joint_refine, rotation_losses, rotation_losses_chunked, update_errors, update_rotations,
    IterationMetrics, RefinementConfig,
};
use esl::sampling::mesh::{generate_symmetric_nodes, spacing_stats, write_nodes};
use esl::sampling::{interval_lds_discrepancy, nearest_neighbour_angles, so3_mesh as build_mesh, IntervalLds};

use crate::{CliError, CtfArgs, LiftArgs};

const DEG: f64 = 180.0 / std::f64::consts::PI;

fn runtime<E: Display>(context: impl Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

fn bad_input<E: Display>(path: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Usage(format!("cannot read {}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(runtime(format!("cannot create {}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(runtime(format!("cannot create {}", path.display())))
}

fn ctf(args: &CtfArgs) -> Result<CtfParams, CliError> {
    CtfParams::new(args.defocus_um, args.cs_mm, args.wavenumber_invnm, args.amp_contrast, None)
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn voxel_size(given: Option<f64>, n: usize) -> Result<f64, CliError> {
    match given {
        Some(v) if v > 0.0 && v.is_finite() => Ok(v),
        Some(v) => Err(CliError::Usage(format!("--voxel-size must be positive, got {v}"))),
        None => Ok(REFERENCE_BOX_NM / n as f64),
    }
}

fn read_volume(path: &Path, vs: Option<f64>) -> Result<Volume, CliError> {
    let t = read_eslt_file(path).map_err(bad_input(path))?;
    let n = t.dims.first().copied().unwrap_or(0);
    tensor_to_volume(&t, voxel_size(vs, n.max(1))?).map_err(bad_input(path))
}

fn read_images(path: &Path, vs: Option<f64>) -> Result<ImageStack, CliError> {
    let t = read_eslt_file(path).map_err(bad_input(path))?;
    let n = t.dims.get(1).copied().unwrap_or(0);
    tensor_to_images(&t, voxel_size(vs, n.max(1))?).map_err(bad_input(path))
}

fn read_rotations(path: &Path) -> Result<Vec<Rotation>, CliError> {
    read_rotations_file(path).map_err(bad_input(path))
}

fn write_volume(path: &Path, v: &Volume) -> Result<(), CliError> {
    write_eslt_file(path, &volume_to_tensor(v)).map_err(runtime(format!("cannot write {}", path.display())))
}

fn write_rotations(path: &Path, r: &[Rotation]) -> Result<(), CliError> {
    write_rotations_file(path, r).map_err(runtime(format!("cannot write {}", path.display())))
}

fn esl_config(lift: &LiftArgs) -> Result<EslConfig, CliError> {
    let c = EslConfig { eta: lift.eta, j0: lift.j0, gamma: lift.gamma, bary_max_iters: lift.bary_iters, bary_tol: 0.0 };
    c.validate(3).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(c)
}

fn mesh(level: usize) -> Result<Vec<Rotation>, CliError> {
    eprintln!("building SO(3) mesh level {level}");
    Ok(build_mesh(level).map_err(runtime(format!("mesh level {level}")))?.into_points())
}

fn check_gt(gt: &[Rotation], n_images: usize, path: &Path) -> Result<(), CliError> {
    if gt.len() != n_images {
        return Err(CliError::Usage(format!("{} has {} rotations for {n_images} images", path.display(), gt.len())));
    }
    Ok(())
}

fn refine_error(e: RefineError) -> CliError {
    match e {
        RefineError::InvalidConfig(m) => CliError::Usage(m),
        RefineError::MemoryBudget { needed, budget } => CliError::Runtime(format!(
            "projections need {needed} values but --memory-budget is {budget}; pass --chunk N to project N rotations at a time"
        )),
        e => CliError::Runtime(e.to_string()),
    }
}

pub fn phantom(size: usize, vs: Option<f64>, seed: u64, out: &Path) -> Result<(), CliError> {
    if size < 2 {
        return Err(CliError::Usage(format!("--size must be at least 2, got {size}")));
    }
    let v = make_phantom(size, voxel_size(vs, size)?, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    write_volume(out, &v)?;
    eprintln!("wrote {size}³ phantom to {}", out.display());
    Ok(())
}

pub fn gen_data(
    volume: &Path,
    vs: Option<f64>,
    num_images: usize,
    snr: f64,
    ctf_args: &CtfArgs,
    seed: u64,
    out_dir: &Path,
) -> Result<(), CliError> {
    let v = read_volume(volume, vs)?;
    let params = ctf(ctf_args)?;
    let data = generate_dataset(&v, num_images, snr, &params, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    create_dir(out_dir)?;
    let images = out_dir.join("images.eslt");
    write_eslt_file(&images, &images_to_tensor(&data.images)).map_err(runtime(format!("cannot write {}", images.display())))?;
    write_rotations(&out_dir.join("gt_rotations.csv"), &data.gt_rotations)?;
    let path = out_dir.join("params.txt");
    let mut w = create(&path)?;
    let io = runtime(format!("cannot write {}", path.display()));
    writeln!(w, "# signal power {:.17e}\n# noise variance {:.17e}", data.signal_power, data.noise_variance)
        .map_err(io)?;
    let pairs = [
        ("voxel-size", format!("{}", v.voxel_size())),
        ("num-images", num_images.to_string()),
        ("snr", format!("{snr}")),
        ("seed", seed.to_string()),
        ("defocus-um", format!("{}", ctf_args.defocus_um)),
        ("cs-mm", format!("{}", ctf_args.cs_mm)),
        ("wavenumber-invnm", format!("{}", ctf_args.wavenumber_invnm)),
        ("amp-contrast", format!("{}", ctf_args.amp_contrast)),
    ];
    write_key_values(&mut w, &pairs).map_err(runtime(format!("cannot write {}", path.display())))?;
    w.flush().map_err(runtime(format!("cannot write {}", path.display())))?;
    eprintln!("wrote {num_images} images of {}² pixels to {}", v.n(), out_dir.display());
    Ok(())
}

pub struct EstimateArgs {
    pub volume: PathBuf,
    pub images: PathBuf,
    pub voxel_size: Option<f64>,
    pub ctf: CtfArgs,
    pub lift: LiftArgs,
    pub sigma: Option<f64>,
    pub memory_budget: usize,
    pub chunk: Option<usize>,
    pub out_rotations: PathBuf,
    pub out_weights: Option<PathBuf>,
    pub out_metrics: Option<PathBuf>,
    pub gt_rotations: Option<PathBuf>,
}

pub fn estimate_rotations(a: &EstimateArgs) -> Result<(), CliError> {
    let v = read_volume(&a.volume, a.voxel_size)?;
    let images = read_images(&a.images, a.voxel_size)?;
    let gt = a.gt_rotations.as_deref().map(read_rotations).transpose()?;
    if let (Some(g), Some(p)) = (&gt, &a.gt_rotations) {
        check_gt(g, images.len(), p)?;
    }
    let config = esl_config(&a.lift)?;
    if a.sigma.is_some_and(|s| !(s > 0.0)) || a.chunk == Some(0) {
        return Err(CliError::Usage("--sigma and --chunk must be positive".into()));
    }
    let model = ForwardModel::for_volume(&v, ctf(&a.ctf)?).map_err(runtime("forward model"))?;
    let points = mesh(a.lift.mesh_level)?;
    let sigma = match a.sigma {
        Some(s) => s,
        None => default_parameters(&images, &v).map_err(refine_error)?.0,
    };
    eprintln!("losses for {} images over {} rotations", images.len(), points.len());
    let losses = match a.chunk {
        Some(c) => rotation_losses_chunked(&model, &v, &images, &points, sigma, c),
        None => rotation_losses(&model, &v, &images, &points, sigma, a.memory_budget),
    }
    .map_err(refine_error)?;
    let upd = update_rotations(&losses, &points, &config).map_err(refine_error)?;
    write_rotations(&a.out_rotations, &upd.rotations)?;
    if let Some(p) = &a.out_weights {
        let mut w = create(p)?;
        write_weights(&mut w, &upd.weights).map_err(runtime(format!("cannot write {}", p.display())))?;
    }
    let (mean_err_deg, std_err_deg, mean_w2_deg) = match &gt {
        Some(g) => update_errors(&upd, &points, g).map_err(refine_error)?,
        None => (f64::NAN, f64::NAN, f64::NAN),
    };
    let row = IterationMetrics {
        iter: 1,
        mean_err_deg,
        std_err_deg,
        mean_l0: upd.mean_l0(),
        mean_w2_deg,
        mean_gamma: upd.mean_gamma(),
        objective: f64::NAN,
        solver_iters: 0,
    };
    if let Some(p) = &a.out_metrics {
        let mut w = MetricsWriter::create(p).map_err(runtime(format!("cannot create {}", p.display())))?;
        w.append(&row).map_err(runtime(format!("cannot write {}", p.display())))?;
    }
    eprintln!("mean l0 {:.2}, mean gamma {:.4}", row.mean_l0, row.mean_gamma);
    if gt.is_some() {
        eprintln!("aligned error {mean_err_deg:.3} ± {std_err_deg:.3} deg, W2 {mean_w2_deg:.3} deg");
    }
    Ok(())
}

pub struct RefineArgs {
    pub images: PathBuf,
    pub init_volume: PathBuf,
    pub voxel_size: Option<f64>,
    pub init_blur: f64,
    pub ctf: CtfArgs,
    pub lift: LiftArgs,
    pub iters: usize,
    pub sigma: Option<f64>,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub chunk: usize,
    pub out_dir: PathBuf,
    pub gt_rotations: Option<PathBuf>,
}

pub fn refine(a: &RefineArgs) -> Result<(), CliError> {
    let images = read_images(&a.images, a.voxel_size)?;
    let mut v0 = read_volume(&a.init_volume, a.voxel_size)?;
    if !(a.init_blur >= 0.0) {
        return Err(CliError::Usage(format!("--init-blur must be non-negative, got {}", a.init_blur)));
    }
    if a.init_blur > 0.0 {
        v0 = blur_volume(&v0, a.init_blur).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let gt = a.gt_rotations.as_deref().map(read_rotations).transpose()?;
    if let (Some(g), Some(p)) = (&gt, &a.gt_rotations) {
        check_gt(g, images.len(), p)?;
    }
    let config = RefinementConfig {
        eta: a.lift.eta,
        j0: a.lift.j0,
        outer_iters: a.iters,
        bary_iters: a.lift.bary_iters,
        sigma: a.sigma,
        tau1: a.tau1,
        tau2: a.tau2,
        sampling_level: a.lift.mesh_level,
        gamma: a.lift.gamma,
        chunk: a.chunk,
        ..RefinementConfig::default()
    };
    config.validate().map_err(refine_error)?;
    let model = ForwardModel::for_volume(&v0, ctf(&a.ctf)?).map_err(runtime("forward model"))?;
    let points = mesh(a.lift.mesh_level)?;
    create_dir(&a.out_dir)?;
    let metrics_path = a.out_dir.join("metrics.csv");
    let mut metrics =
        MetricsWriter::create(&metrics_path).map_err(runtime(format!("cannot create {}", metrics_path.display())))?;
    let io = |e: esl::error::FormatError| RefineError::Io(std::io::Error::other(e.to_string()));
    let state = joint_refine(&model, &images, &v0, &points, &config, gt.as_deref(), |s| {
        let k = s.iteration;
        write_eslt_file(&a.out_dir.join(format!("volume_{k}.eslt")), &volume_to_tensor(&s.volume)).map_err(io)?;
        write_rotations_file(&a.out_dir.join(format!("rotations_{k}.csv")), &s.rotations).map_err(io)?;
        let row = s.log.last().expect("one row per iteration");
        metrics.append(row).map_err(io)?;
        eprintln!(
            "iter {k}: err {:.3} ± {:.3} deg, l0 {:.2}, gamma {:.4}, objective {:.6e}, {} solver iterations",
            row.mean_err_deg, row.std_err_deg, row.mean_l0, row.mean_gamma, row.objective, row.solver_iters
        );
        Ok(())
    })
    .map_err(refine_error)?;
    write_volume(&a.out_dir.join("volume.eslt"), &state.volume)?;
    write_rotations(&a.out_dir.join("rotations.csv"), &state.rotations)?;
    let p = a.out_dir.join("weights.csv");
    write_weights(create(&p)?, &state.weights).map_err(runtime(format!("cannot write {}", p.display())))?;
    Ok(())
}

pub fn lds_check(eta: f64, b: f64, levels: usize, out: Option<&Path>) -> Result<(), CliError> {
    if !(eta > 0.0 && eta < 2.0) {
        return Err(CliError::Usage(format!("--eta must lie in (0, 2), got {eta}")));
    }
    if levels == 0 {
        return Err(CliError::Usage("--levels must be positive".into()));
    }
    let mut lds = IntervalLds::new(eta, b).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut text = String::from("level,size,radius,count_gap,quad_gap,count_scaled,quad_scaled\n");
    let mut trend = Vec::new();
    for level in 1..=levels {
        match interval_lds_discrepancy(&mut lds, level, 1.0) {
            Ok((rep, cs, qs)) => {
                let size = lds.size(level).map_err(runtime("size"))?;
                text += &format!(
                    "{level},{size},{:.17e},{:.17e},{:.17e},{cs:.17e},{qs:.17e}\n",
                    rep.radius, rep.count_gap, rep.quad_gap
                );
                if level >= 3 {
                    trend.push((level, cs, qs));
                }
            }
            Err(e) => {
                eprintln!("level {level}: {e}");
                let size = lds.size(level).map(|s| s.to_string()).unwrap_or_else(|_| "NaN".into());
                text += &format!("{level},{size},NaN,NaN,NaN,NaN,NaN\n");
            }
        }
    }
    match out {
        Some(p) => std::fs::write(p, &text).map_err(runtime(format!("cannot write {}", p.display())))?,
        None => print!("{text}"),
    }
    for w in trend.windows(2) {
        let ((l0, c0, q0), (l1, c1, q1)) = (w[0], w[1]);
        if !(c1 < c0 && q1 < q0) {
            return Err(CliError::Runtime(format!(
                "scaled discrepancy does not decrease from level {l0} ({c0:.5}, {q0:.5}) to level {l1} ({c1:.5}, {q1:.5})"
            )));
        }
    }
    eprintln!("scaled discrepancies decrease over levels 3..{levels}");
    Ok(())
}

pub fn so3_mesh(level: usize, out: &Path) -> Result<(), CliError> {
    let points = mesh(level)?;
    write_rotations(out, &points)?;
    let (mean, std, cv) = spacing_stats(&nearest_neighbour_angles(&points));
    println!("size {}", points.len());
    println!("nearest-neighbour angle {:.4} ± {:.4} deg (cv {cv:.4})", mean * DEG, std * DEG);
    Ok(())
}

pub fn eval(est: &Path, gt: &Path, out: &Path) -> Result<(), CliError> {
    let e = read_rotations(est)?;
    let g = read_rotations(gt)?;
    if e.len() != g.len() {
        return Err(CliError::Usage(format!("{} estimated rotations for {} ground-truth rotations", e.len(), g.len())));
    }
    let al = align_rotations(&e, &g).map_err(runtime("alignment"))?;
    let mut w = create(out)?;
    let io = |e: std::io::Error| CliError::Runtime(format!("cannot write {}: {e}", out.display()));
    writeln!(w, "index,err_deg,phi_deg,theta_deg,psi_deg,gt_phi_deg,gt_theta_deg,gt_psi_deg").map_err(io)?;
    for (i, ((r, t), err)) in e.iter().zip(&g).zip(&al.aligned_errors).enumerate() {
        let (p, th, ps) = euler_zyz(&al.apply(r));
        let (gp, gth, gps) = euler_zyz(t);
        writeln!(
            w,
            "{i},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            err * DEG,
            p * DEG,
            th * DEG,
            ps * DEG,
            gp * DEG,
            gth * DEG,
            gps * DEG
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)?;
    println!("rotations {}", e.len());
    println!("reflected {}", al.reflected);
    println!("mean error {:.6} deg", al.mean * DEG);
    println!("std error {:.6} deg", al.std * DEG);
    Ok(())
}

pub fn base_nodes(out: &Path, pairs: usize, iters: usize, seed: u64) -> Result<(), CliError> {
    if pairs < 5 {
        return Err(CliError::Usage(format!("--pairs must be at least 5, got {pairs}")));
    }
    let nodes = generate_symmetric_nodes(pairs, iters, seed);
    let mut w = create(out)?;
    write_nodes(&nodes, &mut w).and_then(|_| w.flush()).map_err(runtime(format!("cannot write {}", out.display())))?;
    eprintln!("wrote {} nodes to {}", nodes.len(), out.display());
    Ok(())
}
