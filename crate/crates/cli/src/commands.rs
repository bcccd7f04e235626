//! Implementations of the seven subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use tusvol_core::compound::{
    compound as compound_sweep, read_mask, read_volume, write_mask, write_volume,
    CompoundingConfig, SplatKernel, VoxelGrid,
};
use tusvol_core::neuralseg::{self, ArchitectureSpec, QuickNatLite, Segmenter, TrainConfig};
use tusvol_core::obstats::{
    self, bland_altman_svg, read_reference_csv, MeasurementTable, Modality, StatsConfig,
    VariabilityMethod, STATS_CSV_HEADER,
};
use tusvol_core::phantom::{
    load_dataset, run_study, save_dataset, simulate_subject_sweep, split_train_val,
    training_slices, StudyConfig,
};
use tusvol_core::trackio::{read_sweep, synchronize, write_sweep, LobeSide};
use tusvol_core::volumetry::{ellipsoid_volume, mask_volume, LobeAxes, VolumetryConfig};
use tusvol_core::{Error, Result};

use crate::config::FileConfig;
use crate::manifest::Run;

pub struct Context {
    pub seed: u64,
    pub file: FileConfig,
}

fn write_text(run: &mut Run, path: &Path, text: &str) -> Result<()> {
    run.output(path);
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    observers: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Fallback segmentation threshold for the 3D pipeline.
    #[arg(long)]
    threshold: Option<f64>,
    /// Segment the 3D pipeline with a trained model instead of the threshold.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Skip writing per-acquisition sweep containers.
    #[arg(long)]
    no_sweeps: bool,
    /// Generate a training dataset from this many phantoms instead of a study.
    #[arg(long)]
    trainset: Option<usize>,
    /// Slices per lobe in trainset mode.
    #[arg(long, default_value_t = 10)]
    slices_per_lobe: usize,
    /// Network canvas edge in trainset mode.
    #[arg(long, default_value_t = 64)]
    input_size: usize,
}

#[derive(Serialize)]
struct SimulateSnapshot {
    study: StudyConfig,
    threshold: Option<f64>,
    model: Option<String>,
    trainset: Option<usize>,
    slices_per_lobe: usize,
    input_size: usize,
    emit_sweeps: bool,
}

pub fn simulate(ctx: &Context, args: SimulateArgs) -> Result<()> {
    let file = &ctx.file.simulate;
    let study_cfg = StudyConfig {
        master_seed: ctx.seed,
        subjects: args.subjects.or(file.subjects).unwrap_or(3),
        observers: args.observers.or(file.observers).unwrap_or(3),
        repeats: args.repeats.or(file.repeats).unwrap_or(3),
        ..StudyConfig::default()
    };
    let threshold = args.threshold.or(file.threshold);
    if threshold.is_some() && args.model.is_some() {
        return Err(Error::Config("--threshold and --model are mutually exclusive".into()));
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;

    let snapshot = SimulateSnapshot {
        study: study_cfg,
        threshold,
        model: args.model.as_ref().map(|p| p.display().to_string()),
        trainset: args.trainset,
        slices_per_lobe: args.slices_per_lobe,
        input_size: args.input_size,
        emit_sweeps: !args.no_sweeps && args.trainset.is_none(),
    };

    let run = Run::new("simulate", ctx.seed, &args.out);
    run.execute(&snapshot, |run| {
        if let Some(phantoms) = args.trainset {
            let samples = training_slices(&study_cfg, phantoms, args.slices_per_lobe, args.input_size)?;
            run.output(&args.out.join("dataset.json"));
            run.output(&args.out.join("images"));
            run.output(&args.out.join("masks"));
            save_dataset(&samples, &args.out)?;
            println!("wrote {} training pairs to {}", samples.len(), args.out.display());
            return Ok(());
        }

        let net = args.model.as_deref().map(neuralseg::checkpoint::load).transpose()?;
        let segment = move |grid: &VoxelGrid| match &net {
            Some(net) => Segmenter::Network(net).apply(grid),
            None => Segmenter::Threshold(threshold.unwrap_or(0.5) as f32).apply(grid),
        };
        let out = run_study(&study_cfg, &segment)?;

        let study_path = args.out.join("study.csv");
        run.output(&study_path);
        out.table.write_csv(&study_path)?;
        let ref_path = args.out.join("reference.csv");
        run.output(&ref_path);
        obstats::write_reference_csv(&out.reference, &ref_path)?;

        if !args.no_sweeps {
            let sweeps_dir = args.out.join("sweeps");
            run.output(&sweeps_dir);
            for s in 0..study_cfg.subjects {
                for o in 1..=study_cfg.observers {
                    for r in 1..=study_cfg.repeats {
                        for side in [LobeSide::Left, LobeSide::Right] {
                            let sim = simulate_subject_sweep(&study_cfg, s, o, r, side)?;
                            let dir = sweeps_dir.join(format!("s{s:03}_o{o}_r{r}_{side}"));
                            write_sweep(&sim.sweep, &dir)?;
                        }
                    }
                }
            }
        }
        println!(
            "study: {} measurements over {} subjects -> {}",
            out.table.len(),
            study_cfg.subjects,
            args.out.display()
        );
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// compound
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct CompoundArgs {
    /// Sweep container directory.
    #[arg(long)]
    sweep: PathBuf,
    /// Output volume header path (NAME.json; NAME.raw lands next to it).
    #[arg(long)]
    out: PathBuf,
    /// Isotropic voxel spacing, mm.
    #[arg(long)]
    spacing: Option<f64>,
    /// Splat kernel: nearest or trilinear.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    hole_fill: Option<usize>,
    /// Bounding-box margin, mm.
    #[arg(long)]
    padding: Option<f64>,
}

pub fn compound(ctx: &Context, args: CompoundArgs) -> Result<()> {
    let file = &ctx.file.compound;
    let defaults = CompoundingConfig::default();
    let kernel = match args.kernel.as_deref().or(file.kernel.as_deref()) {
        Some(name) => name.parse::<SplatKernel>()?,
        None => defaults.splat_kernel,
    };
    let cfg = CompoundingConfig {
        voxel_spacing: args.spacing.or(file.spacing).unwrap_or(defaults.voxel_spacing),
        splat_kernel: kernel,
        hole_fill_radius: args.hole_fill.or(file.hole_fill_radius).unwrap_or(defaults.hole_fill_radius),
        padding: args.padding.or(file.padding).unwrap_or(defaults.padding),
    };
    cfg.validate()?;

    let out_dir = args.out.parent().unwrap_or(Path::new(".")).to_path_buf();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut run = Run::new("compound", ctx.seed, &out_dir);
    run.input(&args.sweep);
    run.execute(&cfg, |run| {
        let sweep = read_sweep(&args.sweep)?;
        let synced = synchronize(&sweep)?;
        let grid = compound_sweep(&synced, &cfg)?;
        run.output(&args.out);
        run.output(&args.out.with_extension("raw"));
        write_volume(&grid, &args.out)?;
        println!(
            "compounded {} frames into {}x{}x{} voxels at {} mm -> {}",
            sweep.frames().len(),
            grid.dims.0,
            grid.dims.1,
            grid.dims.2,
            cfg.voxel_spacing,
            args.out.display()
        );
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory (images/, masks/, dataset.json).
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Documented scale on the base learning rate.
    #[arg(long)]
    lr_scale: Option<f64>,
    /// Feature channels per dense block.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    edge_gain: Option<f64>,
}

#[derive(Serialize)]
struct TrainSnapshot {
    architecture: ArchitectureSpec,
    train: TrainConfig,
}

pub fn train(ctx: &Context, args: TrainArgs) -> Result<()> {
    let file = &ctx.file.train;
    let defaults = TrainConfig::default();
    let train_cfg = TrainConfig {
        epochs: args.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        batch_size: args.batch.or(file.batch_size).unwrap_or(defaults.batch_size),
        learning_rate: args.lr.or(file.learning_rate).unwrap_or(defaults.learning_rate),
        lr_scale: args.lr_scale.or(file.lr_scale).unwrap_or(300.0),
        edge_weight_gain: args.edge_gain.or(file.edge_weight_gain).unwrap_or(defaults.edge_weight_gain),
        seed: ctx.seed,
        ..defaults
    };
    train_cfg.validate()?;

    let samples = load_dataset(&args.data)?;
    let input_size = samples
        .first()
        .map(|s| s.w)
        .ok_or_else(|| Error::Data("dataset is empty".into()))?;
    let arch = ArchitectureSpec {
        channels: args.width.or(file.width).unwrap_or(16),
        input_size: file.input_size.unwrap_or(input_size),
        ..ArchitectureSpec::default()
    };
    arch.validate()?;

    let out_dir = args.out.parent().unwrap_or(Path::new(".")).to_path_buf();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut run = Run::new("train", ctx.seed, &out_dir);
    run.input(&args.data);
    let snapshot = TrainSnapshot { architecture: arch, train: train_cfg };
    run.execute(&snapshot, |run| {
        let (train_set, val_set) = split_train_val(&samples);
        let mut net = QuickNatLite::new(arch, ctx.seed)?;
        let report = neuralseg::train(&mut net, &train_set, &val_set, &train_cfg)?;
        run.output(&args.out);
        neuralseg::checkpoint::save(&net, ctx.seed, &args.out)?;
        let metrics_path = out_dir.join("metrics.csv");
        write_text(run, &metrics_path, &neuralseg::metrics_to_csv(&report.epochs))?;
        println!(
            "trained {} epochs on {}+{} slices; best val dice {:.4} (epoch {}) -> {}",
            train_cfg.epochs,
            train_set.len(),
            val_set.len(),
            report.best_val_dice,
            report.best_epoch,
            args.out.display()
        );
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// segment
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct SegmentArgs {
    /// Volume header path (NAME.json).
    #[arg(long)]
    volume: PathBuf,
    /// Output mask header path.
    #[arg(long)]
    out: PathBuf,
    /// Trained checkpoint; omit to use the threshold fallback.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Serialize)]
struct SegmentSnapshot {
    model: Option<String>,
    threshold: Option<f64>,
}

pub fn segment(ctx: &Context, args: SegmentArgs) -> Result<()> {
    if args.model.is_some() && args.threshold.is_some() {
        return Err(Error::Config("--model and --threshold are mutually exclusive".into()));
    }
    let threshold = args.threshold.or(ctx.file.segment.threshold);
    if let Some(t) = threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Config(format!("threshold must be in [0, 1], got {t}")));
        }
    }
    let out_dir = args.out.parent().unwrap_or(Path::new(".")).to_path_buf();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let snapshot = SegmentSnapshot {
        model: args.model.as_ref().map(|p| p.display().to_string()),
        threshold: if args.model.is_some() { None } else { Some(threshold.unwrap_or(0.5)) },
    };
    let mut run = Run::new("segment", ctx.seed, &out_dir);
    run.input(&args.volume);
    run.execute(&snapshot, |run| {
        let grid = read_volume(&args.volume)?;
        let mask = match &args.model {
            Some(path) => {
                let net = neuralseg::checkpoint::load(path)?;
                Segmenter::Network(&net).apply(&grid)?
            }
            None => Segmenter::Threshold(threshold.unwrap_or(0.5) as f32).apply(&grid)?,
        };
        run.output(&args.out);
        run.output(&args.out.with_extension("raw"));
        write_mask(&mask, &args.out)?;
        println!(
            "segmented {} of {} voxels as foreground -> {}",
            mask.foreground_count(),
            grid.voxel_count(),
            args.out.display()
        );
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// volume
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct VolumeArgs {
    /// `ellipsoid` (caliper axes) or `mask` (voxel counting).
    #[arg(long)]
    method: String,
    /// L,W,D in cm for the ellipsoid method.
    #[arg(long)]
    axes: Option<String>,
    /// Correction factor for the ellipsoid method.
    #[arg(long)]
    factor: Option<f64>,
    /// Mask header path for the mask method.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Append the result to a per-lobe measurement CSV.
    #[arg(long)]
    append: Option<PathBuf>,
    #[arg(long)]
    subject: Option<String>,
    #[arg(long)]
    observer: Option<u32>,
    #[arg(long)]
    repeat: Option<u32>,
    /// us2d, us3d or reference (for --append).
    #[arg(long)]
    modality: Option<String>,
    /// left or right (for --append).
    #[arg(long)]
    lobe: Option<String>,
}

#[derive(Serialize)]
struct VolumeSnapshot {
    method: String,
    factor: Option<f64>,
}

const LOBE_CSV_HEADER: &str = "subject,observer,repeat,modality,lobe,volume_ml";

pub fn volume(ctx: &Context, args: VolumeArgs) -> Result<()> {
    let volume_ml = match args.method.as_str() {
        "ellipsoid" => {
            let axes_raw = args
                .axes
                .as_deref()
                .ok_or_else(|| Error::Config("--method ellipsoid requires --axes L,W,D".into()))?;
            let parts: Vec<&str> = axes_raw.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Config(format!("--axes expects three values, got {axes_raw:?}")));
            }
            let mut vals = [0.0f64; 3];
            for (v, p) in vals.iter_mut().zip(&parts) {
                *v = p
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad axis value {p:?}")))?;
            }
            let cfg = VolumetryConfig {
                correction_factor: args
                    .factor
                    .or(ctx.file.volume.correction_factor)
                    .unwrap_or(VolumetryConfig::default().correction_factor),
            };
            ellipsoid_volume(&LobeAxes::new(vals[0], vals[1], vals[2])?, &cfg)?
        }
        "mask" => {
            let path = args
                .mask
                .as_deref()
                .ok_or_else(|| Error::Config("--method mask requires --mask PATH".into()))?;
            mask_volume(&read_mask(path)?)
        }
        other => return Err(Error::Config(format!("unknown method {other:?}"))),
    };
    println!("{volume_ml}");

    if let Some(table) = &args.append {
        let (subject, observer, repeat, modality, lobe) = match (
            &args.subject,
            args.observer,
            args.repeat,
            &args.modality,
            &args.lobe,
        ) {
            (Some(s), Some(o), Some(r), Some(m), Some(l)) => (s, o, r, m, l),
            _ => {
                return Err(Error::Config(
                    "--append requires --subject, --observer, --repeat, --modality and --lobe".into(),
                ))
            }
        };
        let _: Modality = modality.parse()?;
        let _: LobeSide = lobe.parse()?;
        let mut text = if table.exists() {
            fs::read_to_string(table).map_err(|e| Error::io(table.display().to_string(), e))?
        } else {
            format!("{LOBE_CSV_HEADER}\n")
        };
        if !text.starts_with(LOBE_CSV_HEADER) {
            return Err(Error::format(
                table.display().to_string(),
                Some(1),
                format!("expected header {LOBE_CSV_HEADER:?}"),
            ));
        }
        text.push_str(&format!("{subject},{observer},{repeat},{modality},{lobe},{volume_ml}\n"));
        fs::write(table, text).map_err(|e| Error::io(table.display().to_string(), e))?;
        let out_dir = table.parent().unwrap_or(Path::new(".")).to_path_buf();
        let run = Run::new("volume", ctx.seed, &out_dir);
        return run.execute(
            &VolumeSnapshot { method: args.method.clone(), factor: args.factor },
            |_| Ok(()),
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct StatsArgs {
    /// Study table CSV.
    #[arg(long)]
    study: PathBuf,
    /// Reference volumes CSV.
    #[arg(long)]
    reference: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    loa: Option<f64>,
}

fn stats_config(ctx: &Context, alpha: Option<f64>, loa: Option<f64>) -> Result<StatsConfig> {
    let cfg = StatsConfig {
        alpha: alpha.or(ctx.file.stats.alpha).unwrap_or(0.05),
        loa_multiplier: loa.or(ctx.file.stats.loa_multiplier).unwrap_or(1.96),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn stats(ctx: &Context, args: StatsArgs) -> Result<()> {
    let cfg = stats_config(ctx, args.alpha, args.loa)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let mut run = Run::new("stats", ctx.seed, &args.out);
    run.input(&args.study);
    run.input(&args.reference);
    run.execute(&cfg, |run| {
        let table = MeasurementTable::read_csv(&args.study)?;
        let reference = read_reference_csv(&args.reference)?;
        let rows = obstats::study_battery(&table, &reference, &cfg)?;
        let mut text = String::from(STATS_CSV_HEADER);
        text.push('\n');
        for row in &rows {
            text.push_str(&row.to_csv_row());
            text.push('\n');
        }
        write_text(run, &args.out.join("study_stats.csv"), &text)?;
        println!("{} comparisons -> {}", rows.len(), args.out.join("study_stats.csv").display());
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    study: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    loa: Option<f64>,
    /// Intraobserver variability formula: range_ratio or cv.
    #[arg(long)]
    variability: Option<String>,
}

#[derive(Serialize)]
struct ReportSnapshot {
    stats: StatsConfig,
    variability_method: String,
}

pub fn report(ctx: &Context, args: ReportArgs) -> Result<()> {
    let cfg = stats_config(ctx, args.alpha, args.loa)?;
    let method: VariabilityMethod = args
        .variability
        .as_deref()
        .or(ctx.file.stats.variability_method.as_deref())
        .unwrap_or("range_ratio")
        .parse()?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let snapshot = ReportSnapshot { stats: cfg, variability_method: method.to_string() };
    let mut run = Run::new("report", ctx.seed, &args.out);
    run.input(&args.study);
    run.input(&args.reference);
    run.execute(&snapshot, |run| {
        let table = MeasurementTable::read_csv(&args.study)?;
        let reference = read_reference_csv(&args.reference)?;
        render_report(run, &args.out, &table, &reference, &cfg, method)
    })
}

fn render_report(
    run: &mut Run,
    out: &Path,
    table: &MeasurementTable,
    reference: &[(String, f64)],
    cfg: &StatsConfig,
    method: VariabilityMethod,
) -> Result<()> {
    let subjects = table.subjects();
    let observers = table.observers();

    // Table 1 analog: intraobserver variability per observer and modality,
    // plus a paired test between each observer's averaged 2D and 3D volumes.
    let mut t1 = String::from(
        "observer,method,us2d_mean_pct,us2d_sd_pct,us3d_mean_pct,us3d_sd_pct,t,df,p,significant\n",
    );
    for &observer in &observers {
        let mut per_subject_2d = Vec::new();
        let mut per_subject_3d = Vec::new();
        let mut means_2d = Vec::new();
        let mut means_3d = Vec::new();
        for subject in &subjects {
            let r2 = table.repeat_volumes(subject, observer, Modality::Us2d);
            let r3 = table.repeat_volumes(subject, observer, Modality::Us3d);
            if r2.len() < 2 || r3.len() < 2 {
                return Err(Error::InsufficientData { needed: 2, got: r2.len().min(r3.len()) });
            }
            per_subject_2d.push((subject.clone(), r2.clone()));
            per_subject_3d.push((subject.clone(), r3.clone()));
            means_2d.push(obstats::mean(&r2));
            means_3d.push(obstats::mean(&r3));
        }
        let v2 = obstats::intraobserver_variability(&per_subject_2d, method)?;
        let v3 = obstats::intraobserver_variability(&per_subject_3d, method)?;
        let t = obstats::paired_t_test(&means_2d, &means_3d, cfg)?;
        t1.push_str(&format!(
            "{observer},{method},{:.4},{:.4},{:.4},{:.4},{:.4},{},{:.6},{}\n",
            v2.mean_pct, v2.sd_pct, v3.mean_pct, v3.sd_pct, t.t, t.df, t.p, t.significant
        ));
    }
    write_text(run, &out.join("table1_intraobserver.csv"), &t1)?;

    // Table 2 analog: interobserver agreement per pair and modality.
    let mut t2 = String::from("pair,modality,n,bias,sd,loa_low,loa_high,t,df,p,significant\n");
    for modality in [Modality::Us2d, Modality::Us3d] {
        for cmp in obstats::interobserver_table(table, modality, cfg)? {
            t2.push_str(&format!(
                "md{}_vs_md{},{modality},{},{:.6},{:.6},{:.6},{:.6},{:.4},{},{:.6},{}\n",
                cmp.pair.0,
                cmp.pair.1,
                cmp.n,
                cmp.agreement.bias,
                cmp.agreement.sd,
                cmp.agreement.loa_low,
                cmp.agreement.loa_high,
                cmp.t_test.t,
                cmp.t_test.df,
                cmp.t_test.p,
                cmp.t_test.significant
            ));
            let svg = bland_altman_svg(
                &cmp.agreement,
                &format!("observer {} vs {} ({modality})", cmp.pair.0, cmp.pair.1),
            );
            write_text(
                run,
                &out.join(format!("fig7_md{}_md{}_{modality}.svg", cmp.pair.0, cmp.pair.1)),
                &svg,
            )?;
        }
    }
    write_text(run, &out.join("table2_interobserver.csv"), &t2)?;

    // Table 3 analog: first-series volumes against the reference.
    let mut t3 = String::from("observer,modality,n,observer_mean,observer_sd,bias,t,df,p,significant\n");
    for modality in [Modality::Us2d, Modality::Us3d] {
        for cmp in obstats::compare_to_reference(table, modality, reference, cfg)? {
            t3.push_str(&format!(
                "{},{modality},{},{:.6},{:.6},{:.6},{:.4},{},{:.6},{}\n",
                cmp.observer,
                cmp.n,
                cmp.observer_mean,
                cmp.observer_sd,
                cmp.agreement.bias,
                cmp.t_test.t,
                cmp.t_test.df,
                cmp.t_test.p,
                cmp.t_test.significant
            ));
        }
    }
    write_text(run, &out.join("table3_vs_reference.csv"), &t3)?;

    // Fig 6 analog: intraobserver Bland-Altman per observer and modality,
    // pooling all repeat pairs per subject.
    for &observer in &observers {
        for modality in [Modality::Us2d, Modality::Us3d] {
            let mut pairs = Vec::new();
            for subject in &subjects {
                let repeats = table.repeat_volumes(subject, observer, modality);
                for i in 0..repeats.len() {
                    for j in i + 1..repeats.len() {
                        pairs.push((repeats[i], repeats[j]));
                    }
                }
            }
            let ba = obstats::bland_altman(&pairs, cfg)?;
            let svg = bland_altman_svg(&ba, &format!("observer {observer} repeats ({modality})"));
            write_text(run, &out.join(format!("fig6_md{observer}_{modality}.svg")), &svg)?;
        }
    }
    println!("report tables and plots -> {}", out.display());
    Ok(())
}
