// temporary calibration harness
use std::time::Instant;
use tusvol_core::compound::{compound, CompoundingConfig, LabelMask, SplatKernel, VoxelGrid};
use tusvol_core::geom::{UnitQuat, Vec3};
use tusvol_core::neuralseg::Segmenter;
use tusvol_core::phantom::*;
use tusvol_core::trackio::{synchronize, LobeSide, SweepMeta};
use tusvol_core::volumetry::mask_volume;

fn c1_sweep(px: usize, pitch: f64, dur: f64) -> (PhantomSpec, SimulatedSweep, f64) {
    let lobe = LobeShape {
        center: Vec3::new(30.0, 0.0, 0.0),
        semi_axes: Vec3::new(20.0, 10.0, 10.0),
        rotation: UnitQuat::IDENTITY,
        exponent: 2.0,
    };
    let far = LobeShape { center: Vec3::new(30.0, 500.0, 0.0), ..lobe };
    let spec = PhantomSpec {
        lobes: [lobe, far],
        contrast: 0.6,
        background_level: 0.2,
        speckle_sd: 0.0,
        background_texture_scale_mm: 8.0,
        seed: 1,
    };
    let truth = lobe.analytic_volume_mm3() / 1000.0;
    let quiet = ObserverModel {
        axis_noise_sd: 0.0,
        trajectory_translation_sd_mm: 0.0,
        trajectory_rotation_sd_deg: 0.0,
        pose_position_rms_mm: 0.0,
        pose_angle_rms_deg: 0.0,
        ..ObserverModel::default()
    };
    let traj = SweepTrajectory::linear(
        Vec3::new(6.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), 48.0, dur, px, pitch,
    ).unwrap();
    let meta = SweepMeta {
        subject_id: "c1".into(), observer_id: 1, repeat_index: 1,
        lobe: LobeSide::Right, nominal_frame_rate: 89.0, nominal_pose_rate: 80.0,
    };
    let mut rng = tusvol_core::rng::stream(1, &[]);
    let sim = simulate_sweep(&spec, &traj, &quiet, 89.0, 80.0, meta, &mut rng).unwrap();
    (spec, sim, truth)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("c1");

    if mode == "c1" {
        for (px, pitch, dur, kernel) in [
            (128usize, 0.25f64, 2.2f64, SplatKernel::Trilinear),
            (128, 0.25, 2.2, SplatKernel::Nearest),
            (80, 0.4, 2.0, SplatKernel::Trilinear),
            (96, 0.35, 2.4, SplatKernel::Trilinear),
            (64, 0.5, 1.8, SplatKernel::Trilinear),
        ] {
            let (_, sim, truth) = c1_sweep(px, pitch, dur);
            let synced = synchronize(&sim.sweep).unwrap();
            print!("px {px} pitch {pitch} dur {dur} {kernel:?}:");
            for spacing in [0.5f64, 0.25] {
                let t0 = Instant::now();
                let cfg = CompoundingConfig { voxel_spacing: spacing, splat_kernel: kernel, ..CompoundingConfig::default() };
                let grid = compound(&synced, &cfg).unwrap();
                let mask = LabelMask::from_threshold(&grid, 0.5);
                let v = mask_volume(&mask);
                print!("  s={spacing}: {:+.3}% ({:?})", (v / truth - 1.0) * 100.0, t0.elapsed());
            }
            println!();
        }
        return;
    }

    if mode == "bias" {
        let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(60);
        let spacing: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.7);
        let kernel = match args.get(4).map(|s| s.as_str()) {
            Some("nearest") => SplatKernel::Nearest,
            _ => SplatKernel::Trilinear,
        };
        let tau: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1.5);
        let pitch: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0.7);
        let px: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(48);
        let speed: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(30.0);
        let cfg = StudyConfig {
            master_seed: 777,
            subjects: n,
            observers: 1,
            repeats: 1,
            compounding: CompoundingConfig { voxel_spacing: spacing, splat_kernel: kernel, ..CompoundingConfig::default() },
            observer: ObserverModel { pose_noise_correlation_s: tau, ..ObserverModel::default() },
            protocol: SweepProtocol { pixel_spacing_mm: pitch, frame_px: px, sweep_speed_mm_s: speed, ..SweepProtocol::default() },
            ..StudyConfig::default()
        };
        let segment = |grid: &VoxelGrid| Segmenter::Threshold(0.5).apply(grid);
        let t0 = Instant::now();
        let out = run_study(&cfg, &segment).unwrap();
        let dt = t0.elapsed();
        let mut rel3 = Vec::new();
        let mut rel2 = Vec::new();
        for (id, truth) in out.reference.iter() {
            let v3 = out.table.volume(id, 1, 1, tusvol_core::obstats::Modality::Us3d).unwrap();
            let v2 = out.table.volume(id, 1, 1, tusvol_core::obstats::Modality::Us2d).unwrap();
            rel3.push(v3 / truth - 1.0);
            rel2.push(v2 / truth - 1.0);
        }
        let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let sd = |v: &Vec<f64>| tusvol_core::obstats::sample_sd(v);
        let t3 = mean(&rel3) / (sd(&rel3) / (n as f64).sqrt());
        let lo3 = rel3.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi3 = rel3.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "n {n} s {spacing} {kernel:?} tau {tau} pitch {pitch} px {px} v {speed}: 3D bias {:+.3}% sd {:.3}% range [{:+.2}%, {:+.2}%] t100 {:.2} | 2D bias {:+.3}% sd {:.2}% | {:.1} ms/sweep",
            mean(&rel3) * 100.0, sd(&rel3) * 100.0, lo3 * 100.0, hi3 * 100.0, t3 * (100.0f64 / n as f64).sqrt(),
            mean(&rel2) * 100.0, sd(&rel2) * 100.0,
            dt.as_secs_f64() * 1000.0 / (n as f64 * 2.0),
        );
        return;
    }
    if mode == "train" {
        use tusvol_core::neuralseg::*;
        use tusvol_core::phantom::{training_slices, split_train_val};
        let lr_scale: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300.0);
        let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5);
        let size: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(64);
        let data_cfg = StudyConfig { master_seed: 9001, ..StudyConfig::default() }.high_detail();
        let t0 = Instant::now();
        let samples = training_slices(&data_cfg, 10, 10, size).unwrap();
        let (train_set, val_set) = split_train_val(&samples);
        println!("dataset: {} train / {} val ({:?})", train_set.len(), val_set.len(), t0.elapsed());
        let mut net = QuickNatLite::new(net::ArchitectureSpec { input_size: size, ..Default::default() }, 2024).unwrap();
        let momentum: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.0);
        let edge_gain: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(2.0);
        let cfg = TrainConfig { epochs, lr_scale, momentum, edge_weight_gain: edge_gain, seed: 7, ..TrainConfig::default() };
        let t0 = Instant::now();
        let report = train(&mut net, &train_set, &val_set, &cfg).unwrap();
        for m in &report.epochs {
            println!("epoch {:2}: train_loss {:.4} val_loss {:.4} val_dice {:.4}", m.epoch, m.train_loss, m.val_loss, m.val_dice);
        }
        println!("best epoch {} dice {:.4} ({:?} total)", report.best_epoch, report.best_val_dice, t0.elapsed());
        // Per-slice diagnostics on the validation set.
        let mut worst: Vec<(f64, usize, usize, usize)> = Vec::new();
        for (i, s) in val_set.iter().enumerate() {
            let x = Tensor4::from_vec(1, 1, s.h, s.w, s.image.clone()).unwrap();
            let probs = net.infer(&x).unwrap();
            let pred: Vec<u8> = (0..s.h * s.w)
                .map(|j| u8::from(probs.plane(0, 1)[j] >= probs.plane(0, 0)[j]))
                .collect();
            let d = hard_dice(&pred, &s.mask);
            let fg_t = s.mask.iter().filter(|&&v| v == 1).count();
            let fg_p = pred.iter().filter(|&&v| v == 1).count();
            worst.push((d, i, fg_t, fg_p));
        }
        worst.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let total_t: usize = worst.iter().map(|w| w.2).sum();
        let total_p: usize = worst.iter().map(|w| w.3).sum();
        println!("val fg truth {total_t} vs pred {total_p} ({:+.2}%)", (total_p as f64 / total_t as f64 - 1.0) * 100.0);
        for w in worst.iter().take(8) {
            println!("  slice {} dice {:.3} fg_truth {} fg_pred {}", w.1, w.0, w.2, w.3);
        }
        return;
    }
    if mode == "gc1" {
        use tusvol_core::neuralseg::*;
        use tusvol_core::neuralseg::loss::{edge_map, loss_and_grad};
        use rand::Rng;
        let mut net = QuickNatLite::new(net::ArchitectureSpec { input_size: 32, ..Default::default() }, 17).unwrap();
        let mut prng = tusvol_core::rng::stream(25, &[]);
        for p in net.params_mut() { *p += prng.random_range(-0.05..0.05); }
        let net = net;
        let mut rng = tusvol_core::rng::stream(18, &[]);
        let data: Vec<f64> = (0..32 * 32).map(|_| rng.random_range(0.05..0.95)).collect();
        let image = Tensor4::from_vec(1, 1, 32, 32, data).unwrap();
        let mut target = vec![0u8; 32 * 32];
        for y in 8..24 { for x in 10..22 { target[y * 32 + x] = 1; } }
        let edges = edge_map(&target, 32, 32);
        let cfg = LossConfig::default();
        let plan = net::DropoutPlan::disabled(&net, 1, 32, 32);
        let (probs, tape) = net.forward_train_traced(&image, &plan).unwrap();
        let (l0, dp) = loss_and_grad(&probs, &target, &edges, &cfg).unwrap();
        let g = net.backward(&tape, &plan, &dp);
        let seg = net.segments().iter().find(|s| s.name == "enc1.bn1.beta").unwrap().clone();
        let i = seg.offset;
        println!("analytic {:+.9e}  (loss0 {:.9})", g[i], l0.total);
        let mut params = net.params().to_vec();
        for h in [1e-3f64, 1e-4, 1e-5, 1e-6, 1e-7] {
            let orig = params[i];
            params[i] = orig + h;
            let pp = net.replay_from_stage(seg.stage, &params, &tape, &plan);
            let (lp, _) = loss_and_grad(&pp, &target, &edges, &cfg).unwrap();
            params[i] = orig - h;
            let pm = net.replay_from_stage(seg.stage, &params, &tape, &plan);
            let (lm, _) = loss_and_grad(&pm, &target, &edges, &cfg).unwrap();
            params[i] = orig;
            println!("h {h:.0e}: central {:+.9e} right {:+.9e} left {:+.9e}",
                (lp.total - lm.total) / (2.0 * h), (lp.total - l0.total) / h, (l0.total - lm.total) / h);
        }
        return;
    }
    if mode == "gc" {
        use tusvol_core::neuralseg::*;
        use tusvol_core::neuralseg::gradcheck::finite_difference_check_strided;
        use rand::Rng;
        let noise_seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(25);
        let input_seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(18);
        let mut net = QuickNatLite::new(net::ArchitectureSpec { input_size: 32, ..Default::default() }, 17).unwrap();
        let mut prng = tusvol_core::rng::stream(noise_seed, &[]);
        for p in net.params_mut() { *p += prng.random_range(-0.05..0.05); }
        let net = net;
        let mut rng = tusvol_core::rng::stream(input_seed, &[]);
        let data: Vec<f64> = (0..32 * 32).map(|_| rng.random_range(0.05..0.95)).collect();
        let image = Tensor4::from_vec(1, 1, 32, 32, data).unwrap();
        let mut target = vec![0u8; 32 * 32];
        for y in 8..24 { for x in 10..22 { target[y * 32 + x] = 1; } }
        println!("params: {}", net.param_count());
        let stride: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1);
        let t0 = Instant::now();
        let r = finite_difference_check_strided(&net, &image, &target, &LossConfig::default(), 1e-4, 1e-6, stride).unwrap();
        println!("gradcheck 16ch@32: {} params, max_rel {:.3e} at {}, elapsed {:?}",
                 r.checked, r.max_rel_err, r.worst_param, t0.elapsed());
        return;
    }
    if mode == "ops" {
        use tusvol_core::neuralseg::*;
        use tusvol_core::neuralseg::ops::*;
        use rand::Rng;
        let mut rng = tusvol_core::rng::stream(1, &[]);
        let size = 128usize;
        let x16: Tensor4 = {
            let d: Vec<f64> = (0..4*16*size*size).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor4::from_vec(4, 16, size, size, d).unwrap()
        };
        let x32: Tensor4 = {
            let d: Vec<f64> = (0..4*32*size*size).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor4::from_vec(4, 32, size, size, d).unwrap()
        };
        let shape16 = ConvShape { c_in: 16, c_out: 16, k: 5, pad: 2 };
        let shape32 = ConvShape { c_in: 32, c_out: 16, k: 5, pad: 2 };
        let w16: Vec<f64> = (0..shape16.weight_len()).map(|_| rng.random_range(-0.1..0.1)).collect();
        let w32: Vec<f64> = (0..shape32.weight_len()).map(|_| rng.random_range(-0.1..0.1)).collect();
        let b = vec![0.0; 16];

        let t0 = Instant::now();
        let y = conv2d_forward(&x16, shape16, &w16, &b);
        let dt = t0.elapsed().as_secs_f64();
        let flops = (4 * 16 * 16 * 25 * size * size * 2) as f64;
        println!("conv 16->16 5x5 @128 b4: {:.1} ms = {:.2} GF/s", dt * 1e3, flops / dt / 1e9);

        let t0 = Instant::now();
        let _ = conv2d_forward(&x32, shape32, &w32, &b);
        let dt = t0.elapsed().as_secs_f64();
        println!("conv 32->16 5x5 @128 b4: {:.1} ms = {:.2} GF/s", dt * 1e3, (4*16*32*25*size*size*2) as f64 / dt / 1e9);

        let t0 = Instant::now();
        let g = conv2d_backward(&x16, shape16, &w16, &y);
        let dt = t0.elapsed().as_secs_f64();
        println!("conv bwd 16->16 @128 b4: {:.1} ms = {:.2} GF/s (dx+dw)", dt * 1e3, 2.0 * flops / dt / 1e9);
        let _ = g;

        let gamma = vec![1.0; 16];
        let beta = vec![0.0; 16];
        let t0 = Instant::now();
        let (bn, cache) = batchnorm_forward_train(&x16, &gamma, &beta);
        println!("bn fwd: {:.1} ms", t0.elapsed().as_secs_f64() * 1e3);
        let t0 = Instant::now();
        let _ = batchnorm_backward(&cache, &gamma, &y);
        println!("bn bwd: {:.1} ms", t0.elapsed().as_secs_f64() * 1e3);
        let t0 = Instant::now();
        let _ = relu_forward(&bn);
        println!("relu: {:.1} ms", t0.elapsed().as_secs_f64() * 1e3);
        return;
    }
    if mode == "nn" {
        use tusvol_core::neuralseg::*;
        let size: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(128);
        let steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5);
        let net = QuickNatLite::new(net::ArchitectureSpec { input_size: size, ..Default::default() }, 7).unwrap();
        let mut rng = tusvol_core::rng::stream(1, &[]);
        use rand::Rng;
        let data: Vec<f64> = (0..4 * size * size).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = Tensor4::from_vec(4, 1, size, size, data).unwrap();
        let mut target = vec![0u8; 4 * size * size];
        for t in target.iter_mut().step_by(3) { *t = 1; }
        let edges = vec![0.0; 4 * size * size];
        let cfg = LossConfig::default();
        let mut drng = tusvol_core::rng::stream(2, &[]);
        // warmup + timed steps
        let t0 = Instant::now();
        for _ in 0..steps {
            let plan = net.sample_dropout(&mut drng, 4, size, size);
            let (probs, tape) = net.forward_train(&x, &plan).unwrap();
            let (_, d) = loss_and_grad(&probs, &target, &edges, &cfg).unwrap();
            let _g = net.backward(&tape, &plan, &d);
        }
        let per_step = t0.elapsed().as_secs_f64() / steps as f64;
        let t1 = Instant::now();
        for _ in 0..steps {
            let _ = net.infer(&x).unwrap();
        }
        let per_infer = t1.elapsed().as_secs_f64() / steps as f64;
        println!("size {size}: fwd+bwd {per_step:.3} s/step (batch 4) | infer(batch4) {per_infer:.3} s -> {:.1} ms/slice", per_infer * 250.0);
        return;
    }
    if mode == "prof" {
        let cfg = StudyConfig {
            master_seed: 777,
            subjects: 30,
            observers: 1,
            repeats: 1,
            compounding: CompoundingConfig { voxel_spacing: 0.65, splat_kernel: SplatKernel::Nearest, ..CompoundingConfig::default() },
            protocol: SweepProtocol { pixel_spacing_mm: 0.65, frame_px: 52, sweep_speed_mm_s: 50.0, ..SweepProtocol::default() },
            ..StudyConfig::default()
        };
        let (mut t_sim, mut t_sync, mut t_comp, mut t_seg) = (0.0f64, 0.0, 0.0, 0.0);
        let mut frames_total = 0usize;
        for s_idx in 0..cfg.subjects {
            let spec = subject_phantom(&cfg, s_idx);
            for side in [LobeSide::Left, LobeSide::Right] {
                let t0 = Instant::now();
                let sim = simulate_subject_sweep(&cfg, s_idx, 1, 1, side).unwrap();
                t_sim += t0.elapsed().as_secs_f64();
                frames_total += sim.sweep.frames().len();
                let t0 = Instant::now();
                let synced = synchronize(&sim.sweep).unwrap();
                t_sync += t0.elapsed().as_secs_f64();
                let t0 = Instant::now();
                let grid = compound(&synced, &cfg.compounding).unwrap();
                t_comp += t0.elapsed().as_secs_f64();
                let t0 = Instant::now();
                let mask = LabelMask::from_threshold(&grid, 0.5);
                let _ = mask_volume(&mask);
                t_seg += t0.elapsed().as_secs_f64();
            }
        }
        let n = (cfg.subjects * 2) as f64;
        println!("per sweep: sim {:.1} ms  sync {:.1} ms  compound {:.1} ms  segment {:.1} ms  ({} frames avg)",
                 t_sim/n*1000.0, t_sync/n*1000.0, t_comp/n*1000.0, t_seg/n*1000.0, frames_total as f64 / n);
        return;
    }
    eprintln!("unknown mode {mode}");
}
