use proptest::prelude::*;

use super::*;
use crate::agents::{ArchConfig, ConvSpec};
use crate::env::{NavWorld, SegmentationMaps};
use crate::trainer::AlgorithmVariant;

fn tiny_config(variant: AlgorithmVariant, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(variant, seed, 12);
    c.arch = ArchConfig {
        state_actor: vec![8],
        obs_actor_conv: vec![ConvSpec { channels: 3, kernel: 3, stride: 2 }],
        obs_actor_fc: vec![8],
        critic: vec![8],
        state_attention: vec![8],
        obs_attention_conv: vec![ConvSpec { channels: 3, kernel: 3, stride: 1 }],
        layer_norm: true,
        actor_output_init: 0.3,
    };
    c
}

fn checkpoint(config: &TrainConfig) -> Checkpoint {
    config.build_networks().unwrap().to_checkpoint()
}

#[test]
fn percent_decrease_examples() {
    assert!((percent_decrease(10.0, 6.0, 2.0).unwrap() - 50.0).abs() < 1e-12);
    assert_eq!(percent_decrease(10.0, 10.0, 2.0).unwrap(), 0.0);
    assert!((percent_decrease(10.0, 2.0, 2.0).unwrap() - 100.0).abs() < 1e-12);
}

#[test]
fn percent_decrease_without_advantage_is_undefined() {
    for (train, random) in [(2.0, 2.0), (1.0, 3.0), (f64::NAN, 0.0)] {
        assert!(matches!(percent_decrease(train, 0.5, random), Err(Error::UndefinedMetric(_))));
    }
}

proptest! {
    #[test]
    fn percent_decrease_falls_as_the_other_return_rises(
        random in -5.0f64..5.0,
        gain in 0.01f64..10.0,
        a in -10.0f64..10.0,
        d in 0.0f64..10.0,
    ) {
        let train = random + gain;
        let lo = percent_decrease(train, a, random).unwrap();
        let hi = percent_decrease(train, a + d, random).unwrap();
        prop_assert!(hi <= lo);
    }
}

#[test]
fn training_scenes_are_the_scenes_the_run_trained_on() {
    let c = tiny_config(AlgorithmVariant::April, 3);
    let scenes = class_scenes(&c, DomainClass::Train, 5).unwrap();
    for (i, (d, seed)) in scenes.iter().enumerate() {
        assert_eq!(d, &c.domain);
        assert_eq!(*seed, c.training_scene(i as u64));
    }
    let ext = class_scenes(&c, DomainClass::Ext4, 5).unwrap();
    assert!(ext.iter().all(|(d, _)| d.object_count() == c.domain.object_count() + 4));
    let interp = class_scenes(&c, DomainClass::Interpolation, 5).unwrap();
    assert!(interp.iter().all(|(d, _)| d.object_count() == c.domain.object_count()));
    assert!(class_scenes(&c, DomainClass::Ext8, EVAL_COUNT + 1).is_err());
}

#[test]
fn reports_are_reproducible() {
    let c = tiny_config(AlgorithmVariant::April, 1);
    let ck = checkpoint(&c);
    let classes = [DomainClass::Train, DomainClass::Ext4];
    let a = evaluate_run(&c, &ck, &classes, 6, 2).unwrap();
    let b = evaluate_run(&c, &ck, &classes, 6, 1).unwrap();
    assert_eq!(a, b);
    for r in &a {
        assert_eq!(r.returns.len(), 6);
        assert!(r.returns.iter().chain(&r.random).all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn a_checkpoint_for_other_shapes_is_rejected() {
    let c = tiny_config(AlgorithmVariant::April, 1);
    let mut other = c.clone();
    other.domain.resolution = 16;
    let err = evaluate_run(&c, &checkpoint(&other), &[DomainClass::Train], 2, 1);
    assert!(err.is_err());

    let nets = load_networks(&c, &checkpoint(&c)).unwrap();
    let scenes = class_scenes(&other, DomainClass::Train, 2).unwrap();
    assert!(matches!(policy_returns(&nets, &scenes, 1), Err(Error::Config(_))));
}

fn run_to_target(domain: &DomainConfig, seed: u64) -> f64 {
    let (mut env, mut frame) = NavWorld::reset(domain, seed).unwrap();
    let mut ret = 0.0;
    loop {
        let s = &frame.state;
        let v = domain.max_speed;
        let step = env.step([(s[2] - s[0]).clamp(-v, v), (s[3] - s[1]).clamp(-v, v)]);
        ret += step.reward;
        frame = step.frame;
        if step.done {
            return ret;
        }
    }
}

#[test]
fn a_perfect_policy_scores_one_on_the_training_class() {
    let c = tiny_config(AlgorithmVariant::April, 2);
    let scenes = class_scenes(&c, DomainClass::Train, 30).unwrap();
    let returns: Vec<f64> = scenes.iter().map(|(d, s)| run_to_target(d, *s)).collect();
    let random = random_returns(&scenes, 1).unwrap();
    let run = vec![ClassReturns { class: DomainClass::Train, returns, random }];
    let report = EvalReport::from_runs("oracle", &[2], 30, &[run]).unwrap();
    assert_eq!(report.classes[0].mean, 1.0);
    assert!(report.classes[0].random < 1.0);
}

fn class_returns(class: DomainClass, returns: &[f64], random: &[f64]) -> ClassReturns {
    ClassReturns {
        class,
        returns: returns.to_vec(),
        random: random.to_vec(),
    }
}

#[test]
fn report_aggregates_seed_means() {
    let runs = vec![
        vec![
            class_returns(DomainClass::Train, &[1.0, 1.0], &[0.0, 0.2]),
            class_returns(DomainClass::Ext4, &[1.0, 0.0], &[0.0, 0.0]),
        ],
        vec![
            class_returns(DomainClass::Train, &[1.0, 0.0], &[0.2, 0.2]),
            class_returns(DomainClass::Ext4, &[0.0, 0.0], &[0.0, 0.0]),
        ],
        vec![
            class_returns(DomainClass::Train, &[0.5, 0.5], &[0.0, 0.0]),
            class_returns(DomainClass::Ext4, &[0.5, 0.0], &[0.0, 0.0]),
        ],
    ];
    let r = EvalReport::from_runs("v", &[1, 2, 3], 2, &runs).unwrap();
    let train = r.class(DomainClass::Train).unwrap();
    assert_eq!(train.seed_means, vec![1.0, 0.5, 0.5]);
    // mean 2/3, sample variance ((1/3)^2 + 2 (1/6)^2) / 2 = 1/12
    assert!((train.mean - 2.0 / 3.0).abs() < 1e-12);
    assert!((train.two_sigma - 2.0 * (1.0f64 / 12.0).sqrt()).abs() < 1e-12);
    assert!((train.random - 0.1).abs() < 1e-12);
    assert!(train.within_band(0.9) && !train.within_band(0.0));
    let ext = r.class(DomainClass::Ext4).unwrap();
    assert!((ext.mean - 0.25).abs() < 1e-12);
    let expected = 100.0 * (2.0 / 3.0 - 0.25) / (2.0 / 3.0 - 0.1);
    assert!((r.percent_decrease(DomainClass::Ext4).unwrap() - expected).abs() < 1e-9);
    assert_eq!(r.percent_decrease(DomainClass::Train).unwrap(), 0.0);
    assert!(r.percent_decrease(DomainClass::Ext8).is_err());
}

#[test]
fn one_seed_has_a_zero_band() {
    let runs = vec![vec![class_returns(DomainClass::Train, &[1.0, 0.0], &[0.0, 0.0])]];
    let r = EvalReport::from_runs("v", &[7], 2, &runs).unwrap();
    assert_eq!(r.classes[0].two_sigma, 0.0);
}

#[test]
fn seeds_must_cover_the_same_classes() {
    let runs = vec![
        vec![class_returns(DomainClass::Train, &[1.0], &[0.0])],
        vec![class_returns(DomainClass::Ext4, &[1.0], &[0.0])],
    ];
    assert!(EvalReport::from_runs("v", &[1, 2], 1, &runs).is_err());
    assert!(EvalReport::from_runs("v", &[1], 1, &runs).is_err());
}

#[test]
fn report_csv_round_trips_and_marks_undefined_metrics() {
    let runs = vec![vec![
        class_returns(DomainClass::Train, &[0.0, 0.0], &[0.5, 0.5]),
        class_returns(DomainClass::Interpolation, &[0.0, 1.0], &[0.0, 0.0]),
    ]];
    let r = EvalReport::from_runs("april", &[1], 2, &runs).unwrap();
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("variant,class,seeds,domains,mean_return"));
    let rows = read_rows(buf.as_slice()).unwrap();
    assert_eq!(rows, r.rows());
    assert!(rows.iter().all(|row| row.percent_decrease.is_none()));
    assert!(read_rows("a,b\n1,2\n".as_bytes()).is_err());
}

#[test]
fn localisation_compares_agent_and_target_against_the_rest() {
    let mut z = SegmentationMaps::empty(3, 3);
    z.set(0, 0, true);
    z.set(1, 1, true);
    z.set(2, 2, true);
    let mut mask = vec![0.2; 9];
    mask[0] = 0.9;
    mask[1] = 0.7;
    let l = localisation(&mask, &z).unwrap().unwrap();
    assert!((l.relevant - 0.8).abs() < 1e-12);
    assert!((l.other - 0.2).abs() < 1e-12);
    assert!(l.localised());
    mask[2] = 5.0;
    assert!(!localisation(&mask, &z).unwrap().unwrap().localised());
    assert!(localisation(&mask[..4], &z).is_err());
    assert_eq!(localisation(&[0.5; 9], &SegmentationMaps::empty(3, 2)).unwrap(), None);
}

#[test]
fn mask_images_map_zero_to_black_and_one_to_white() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.png");
    crate::alignment::save_grayscale_png(&[0.0, 0.0, 1.0, 0.0], 2, &path).unwrap();
    let img = image::open(&path).unwrap().to_luma8();
    assert_eq!(img.get_pixel(0, 0).0, [0]);
    assert_eq!(img.get_pixel(0, 1).0, [255]);
    crate::alignment::save_grayscale_png(&[0.0; 4], 2, &path).unwrap();
    assert!(image::open(&path).unwrap().to_luma8().pixels().all(|p| p.0 == [0]));
}

#[test]
fn attention_export_writes_every_frame() {
    let c = tiny_config(AlgorithmVariant::April, 4);
    let nets = load_networks(&c, &checkpoint(&c)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let scenes = class_scenes(&c, DomainClass::Train, 2).unwrap();
    let out = export_attention(&nets, &scenes, dir.path(), true).unwrap();
    assert!(out.frames > 0);
    assert_eq!(out.files.len(), 3 * out.frames + 2);
    assert!(out.files.iter().all(|f| f.exists()));
    assert!(out.localised + out.undefined <= out.frames);

    let overlay = image::open(dir.path().join("ep000_t000_overlay.png")).unwrap().to_rgb8();
    assert_eq!(overlay.dimensions(), (12, 12));
    let state_rows = std::fs::read_to_string(dir.path().join("state_attention.csv")).unwrap();
    assert_eq!(state_rows.lines().count(), out.frames + 1);
    for line in state_rows.lines().skip(1) {
        let h: f64 = line.split(',').skip(2).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((h - 1.0).abs() < 1e-9);
    }

    // the state module cannot read extrapolated states, so no h_s rows
    let ext_dir = dir.path().join("ext");
    let ext = class_scenes(&c, DomainClass::Ext4, 1).unwrap();
    let out = export_attention(&nets, &ext, &ext_dir, false).unwrap();
    assert!(out.files.len() == 2 && out.frames > 0);
    let rows = std::fs::read_to_string(ext_dir.join("state_attention.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1);
}

#[test]
fn attention_export_needs_image_attention() {
    let c = tiny_config(AlgorithmVariant::AsymDdpg, 4);
    let nets = load_networks(&c, &checkpoint(&c)).unwrap();
    let scenes = class_scenes(&c, DomainClass::Train, 1).unwrap();
    assert!(trace_attention(&nets, &scenes, |_| Ok(())).is_err());
}

fn seed_curve(offset: f64) -> Vec<(f64, f64)> {
    (1..=6).map(|i| (50.0 * i as f64, (0.1 * i as f64 + offset).min(1.0))).collect()
}

#[test]
fn plotted_mean_equals_the_csv_mean() {
    let curves = vec![
        Curve { label: "april".into(), seeds: vec![seed_curve(0.0), seed_curve(0.2), seed_curve(-0.1)] },
        Curve { label: "asym-ddpg".into(), seeds: vec![seed_curve(-0.1), seed_curve(0.0)] },
    ];
    let plot = learning_curve(&curves, 320, 200).unwrap();
    let mut buf = Vec::new();
    plot.write_csv(&mut buf).unwrap();
    let mut rows = csv::Reader::from_reader(buf.as_slice());
    let mut n = 0;
    for rec in rows.records() {
        let rec = rec.unwrap();
        let values: Vec<f64> = rec[5].split(';').map(|v| v.parse().unwrap()).collect();
        let mean: f64 = rec[2].parse().unwrap();
        assert!((mean - values.iter().sum::<f64>() / values.len() as f64).abs() < 1e-12);
        let k = curves.iter().position(|c| c.label == rec[0]).unwrap();
        let i = n % 6;
        // the CSV values come straight from the seed curves
        let seeds: Vec<f64> = curves[k].seeds.iter().map(|s| s[i].1).collect();
        assert_eq!(values, seeds);
        n += 1;
    }
    assert_eq!(n, 12);
    // the rendered mean marker sits at the CSV mean
    let last = plot.curves.len() - 1;
    for i in 0..6 {
        let (col, row) = plot.mean_pixel(last, i);
        assert_eq!(plot.canvas.pixel(col, row), CurvePlot::colour(last));
    }
    let (col, row) = plot.mean_pixel(0, 2);
    assert_eq!(plot.canvas.row(plot.curves[0].mean[2]), row);
    assert_eq!(plot.canvas.col(150.0), col);
}

#[test]
fn curves_need_shared_evaluation_points() {
    let mut shifted = seed_curve(0.0);
    shifted[1].0 += 1.0;
    let c = Curve { label: "x".into(), seeds: vec![seed_curve(0.0), shifted] };
    assert!(learning_curve(&[c], 100, 100).is_err());
    let empty = Curve { label: "x".into(), seeds: vec![vec![]] };
    assert!(learning_curve(&[empty], 100, 100).is_err());
}

#[test]
fn log_curves_read_only_evaluation_rows() {
    let log = "episode,env_steps,eval_mean\n0,20,\n1,40,0.5\n2,60,\n3,80,0.75\n";
    assert_eq!(read_log_curve(log.as_bytes()).unwrap(), vec![(2.0, 0.5), (4.0, 0.75)]);
    assert!(read_log_curve("episode\n1\n".as_bytes()).is_err());
}

#[test]
fn bar_heights_follow_the_rows() {
    let rows = vec![
        ReportRow {
            variant: "april".into(),
            class: DomainClass::Train,
            seeds: 3,
            domains: 100,
            mean: 0.8,
            two_sigma: 0.1,
            random: 0.1,
            percent_decrease: Some(0.0),
        },
        ReportRow {
            variant: "asym-ddpg".into(),
            class: DomainClass::Train,
            seeds: 3,
            domains: 100,
            mean: 0.4,
            two_sigma: 0.05,
            random: 0.1,
            percent_decrease: Some(0.0),
        },
    ];
    let chart = bar_chart(&rows, 200, 120).unwrap();
    for (k, r) in rows.iter().enumerate() {
        let (left, right) = chart.bars[k];
        assert!(right > left);
        let c = &chart.canvas;
        // just inside the bar top and just above it
        let top = c.row(r.mean);
        assert_eq!(c.pixel(left, top + 1), CurvePlot::colour(k));
        assert_eq!(c.pixel(left, c.row(r.mean + r.two_sigma) - 1), [255, 255, 255]);
    }
    assert!(bar_chart(&[], 10, 10).is_err());
}
