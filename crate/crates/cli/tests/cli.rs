use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use nlbp_cli::{run, Cli, Failure};
use nlbp_core::classifiers::{StrongClassifier, WeakClassifier};
use nlbp_core::dataset::{Annotation, BoxClass, LabeledBox, Manifest};
use nlbp_core::detector::parse_record;
use nlbp_core::imaging::save_gray;
use nlbp_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn nlbp(args: &[&str]) -> Result<(), Failure> {
    let mut full = vec!["nlbp"];
    full.extend_from_slice(args);
    run(Cli::try_parse_from(full).expect("arguments parse"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Four frames with one plate each, placed exactly on the scan lattice at
/// scale 1 so that an overlap threshold of 1.0 admits one window per plate.
fn lattice_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let (images, anns) = (dir.join("images"), dir.join("annotations"));
    std::fs::create_dir_all(&images).unwrap();
    std::fs::create_dir_all(&anns).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..4 {
        let plate = Rect::new(2 * rng.random_range(0..20), 2 * rng.random_range(0..15), 54, 18);
        let id = format!("f{i}.png");
        let (img, ann) = synth::plate_frame(&mut rng, &id, 120, 60, "42", plate);
        save_gray(&img, &images.join(&id)).unwrap();
        std::fs::write(anns.join(format!("f{i}.txt")), ann.to_sidecar()).unwrap();
    }
    (images, anns)
}

#[test]
fn prepare_counts_match_fixture_geometry() {
    let tmp = tempfile::tempdir().unwrap();
    let (images, anns) = lattice_fixture(tmp.path());
    let out = tmp.path().join("samples");
    nlbp(&["prepare", "--images", s(&images), "--annotations", s(&anns), "--overlap", "1.0", "--out", s(&out)]).unwrap();
    let m = Manifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.positives.len(), 4);
    assert!(m.positives.iter().all(|p| (p.w, p.h) == (54, 18)));
    assert_eq!((m.train_images.len(), m.test_images.len()), (3, 1));
    // 200 negatives per image is well below the clear windows of a 120x60 frame.
    assert_eq!(m.negatives.len(), 4 * 200);
    assert!(out.join("patches.bin").is_file() && out.join("config.toml").is_file());
}

#[test]
fn prepare_is_reproducible_from_flags_and_from_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let (images, anns) = lattice_fixture(tmp.path());
    let run_into = |name: &str| {
        let out = tmp.path().join(name);
        nlbp(&["prepare", "--images", s(&images), "--annotations", s(&anns), "--seed", "5", "--overlap", "0.6", "--out", s(&out)]).unwrap();
        out
    };
    let (a, b) = (run_into("a"), run_into("b"));
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "manifest.json"), read(&b, "manifest.json"));
    assert_eq!(read(&a, "patches.bin"), read(&b, "patches.bin"));

    let c = tmp.path().join("c");
    let snap = a.join("config.toml");
    nlbp(&["prepare", "--config", s(&snap), "--out", s(&c)]).unwrap();
    assert_eq!(read(&a, "manifest.json"), read(&c, "manifest.json"));
}

#[test]
fn missing_annotation_file_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere.txt");
    let err = nlbp(&["prepare", "--images", s(tmp.path()), "--annotations", s(&missing), "--out", s(&tmp.path().join("o"))]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("nowhere.txt"), "{err}");
}

#[test]
fn missing_image_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut ann = Annotation::new("ghost.png");
    ann.boxes.push(LabeledBox {
        rect: Rect::new(0, 0, 54, 18),
        class: BoxClass::Number,
    });
    let side = tmp.path().join("ghost.txt");
    std::fs::write(&side, ann.to_sidecar()).unwrap();
    let err = nlbp(&["prepare", "--images", s(tmp.path()), "--annotations", s(&side), "--out", s(&tmp.path().join("o"))]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

fn bars(dir: &Path, pos: usize, neg: usize) -> PathBuf {
    let out = dir.join("bars");
    nlbp(&["synth", "bars", "--positives", &pos.to_string(), "--negatives", &neg.to_string(), "--seed", "2", "--out", s(&out)]).unwrap();
    out
}

#[test]
fn train_is_byte_deterministic_and_traced() {
    let tmp = tempfile::tempdir().unwrap();
    let samples = bars(tmp.path(), 400, 3000);
    let train = |name: &str| {
        let out = tmp.path().join(name);
        nlbp(&["train", "--samples", s(&samples), "--seed", "3", "--far-target", "0.01", "--out", s(&out)]).unwrap();
        out
    };
    let (a, b) = (train("a"), train("b"));
    let model = std::fs::read(a.join("model.json")).unwrap();
    assert_eq!(model, std::fs::read(b.join("model.json")).unwrap());

    let trace: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("trace.json")).unwrap()).unwrap();
    let mut rounds = 0;
    for stage in trace["stages"].as_array().unwrap() {
        for r in stage["boost"]["rounds"].as_array().unwrap() {
            assert!(r["weighted_error"].as_f64().unwrap() < 0.5);
            rounds += 1;
        }
    }
    assert!(rounds > 0);
    assert!(a.join("metrics.json").is_file());

    // Reloaded model decides every window as the trained one.
    let trained = Cascade::load(&a.join("model.json")).unwrap();
    let reloaded = Cascade::from_json(&trained.to_json().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let frame = GrayImage::from_fn(64, 64, |_, _| rng.random());
    let ii = IntegralImage::new(&frame);
    for _ in 0..1000 {
        let w = Window::at(rng.random_range(0..=52), rng.random_range(0..=40));
        assert_eq!(trained.eval(&ii, w).unwrap(), reloaded.eval(&ii, w).unwrap());
    }
}

#[test]
fn missed_far_target_is_a_halt_with_outputs_written() {
    let tmp = tempfile::tempdir().unwrap();
    let samples = bars(tmp.path(), 100, 400);
    let cfg = tmp.path().join("halt.toml");
    std::fs::write(&cfg, "[train]\nmax_stages = 1\nfar_target = 0.0\n").unwrap();
    let out = tmp.path().join("m");
    let err = nlbp(&["train", "--config", s(&cfg), "--samples", s(&samples), "--out", s(&out)]).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    assert!(out.join("model.json").is_file());
}

fn zero_model() -> Cascade {
    let f = FeatureDescriptor::new(FeatureKind::Census, Rect::new(0, 0, 12, 24));
    let weak = WeakClassifier::new(f, vec![false; 512], None).unwrap();
    let stage = StrongClassifier::new(vec![weak], vec![1.0], 0.0).unwrap();
    Cascade::new(DetectorLabel::Digit(3), Aperture::DIGIT, FeatureFamily::Cs, vec![stage]).unwrap()
}

#[test]
fn blank_frame_with_rejecting_model_gives_no_records() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("zero.json");
    zero_model().save(&model).unwrap();
    let frame = tmp.path().join("blank.png");
    save_gray(&GrayImage::filled(80, 60, 128), &frame).unwrap();
    let out = tmp.path().join("dets.tsv");
    nlbp(&["detect", "--model", s(&model), "--out", s(&out), s(&frame)]).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
}

/// Accepts windows whose census codes over the whole aperture and its two
/// halves all equal those of `glyph`.
fn glyph_model(glyph: &GrayImage) -> Cascade {
    let ii = IntegralImage::new(glyph);
    let weaks: Vec<WeakClassifier> = [Rect::new(0, 0, 12, 24), Rect::new(0, 0, 12, 12), Rect::new(0, 12, 12, 12)]
        .into_iter()
        .map(|r| {
            let f = FeatureDescriptor::new(FeatureKind::Census, r);
            let mut lut = vec![false; 512];
            lut[f.code_at(&ii, Window::at(0, 0)) as usize] = true;
            WeakClassifier::new(f, lut, None).unwrap()
        })
        .collect();
    let stage = StrongClassifier::new(weaks, vec![1.0; 3], 2.5).unwrap();
    Cascade::new(DetectorLabel::Digit(3), Aperture::DIGIT, FeatureFamily::Cs, vec![stage]).unwrap()
}

#[test]
fn detect_output_matches_golden_file() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let glyph = synth::render_glyph(&mut rng, 3, Aperture::DIGIT);
    let mut frame = GrayImage::filled(90, 50, 210);
    frame.paste(&glyph, 8, 6);
    frame.paste(&glyph, 60, 20);
    let (model, frame_path) = (tmp.path().join("m.json"), tmp.path().join("frame.png"));
    glyph_model(&glyph).save(&model).unwrap();
    save_gray(&frame, &frame_path).unwrap();

    let cfg = tmp.path().join("scan.toml");
    std::fs::write(&cfg, "[scan]\nstride = 1\nmax_scale = 1.0\nnms_iou = 0.3\n").unwrap();
    let out = tmp.path().join("dets.tsv");
    let overlay = tmp.path().join("overlay");
    nlbp(&["detect", "--config", s(&cfg), "--model", s(&model), "--overlay", s(&overlay), "--out", s(&out), s(&frame_path)]).unwrap();
    assert!(overlay.join("frame.png").is_file());

    // Records name the frame as given; make them location-independent.
    let got = std::fs::read_to_string(&out).unwrap().replace(s(&frame_path), "frame.png");
    let rects: Vec<Rect> = got.lines().map(|l| parse_record(l).unwrap().1.rect).collect();
    assert!(rects.contains(&Rect::new(8, 6, 12, 24)) && rects.contains(&Rect::new(60, 20, 12, 24)), "{got}");

    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/detect.tsv");
    if std::env::var_os("NLBP_BLESS").is_some() {
        std::fs::write(&golden, &got).unwrap();
    }
    assert_eq!(got, std::fs::read_to_string(&golden).unwrap());
}

#[test]
fn aperture_mismatch_is_diagnosed() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("zero.json");
    zero_model().save(&model).unwrap();
    let frame = tmp.path().join("f.png");
    save_gray(&GrayImage::filled(40, 40, 0), &frame).unwrap();
    let err = nlbp(&["detect", "--model", s(&model), "--aperture", "54x18", s(&frame)]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

fn grid_run(images: &Path, anns: &Path, out: &Path) {
    nlbp(&[
        "grid",
        "--images",
        s(images),
        "--annotations",
        s(anns),
        "--features",
        "cs",
        "--overlap",
        "0.7",
        "--label",
        "number",
        "--aperture",
        "27x9",
        "--far-target",
        "0.01",
        "--out",
        s(out),
    ])
    .unwrap();
}

#[test]
fn single_cell_grid_emits_reports_and_resumes_as_noop() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    nlbp(&["synth", "plates", "--count", "12", "--seed", "4", "--out", s(&data)]).unwrap();
    let (images, anns) = (data.join("images"), data.join("annotations"));
    let out = tmp.path().join("grid");
    grid_run(&images, &anns, &out);

    for f in ["config.toml", "results.csv", "features-number.csv", "frr-number.csv", "features-number.svg", "frr-number.svg"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let cell = |ext: &str| out.join(format!("cells/cs-o0.7-number.{ext}"));
    for ext in ["json", "model.json", "trace.json", "decisions.csv"] {
        assert!(cell(ext).is_file(), "missing cell {ext}");
    }
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 2, "{results}");
    assert!(results.contains(",ok,"), "{results}");

    let snapshot = |p: &Path| (std::fs::read(p).unwrap(), std::fs::metadata(p).unwrap().modified().unwrap());
    let model = snapshot(&cell("model.json"));
    let record = snapshot(&cell("json"));
    grid_run(&images, &anns, &out);
    assert_eq!(snapshot(&cell("model.json")), model);
    assert_eq!(snapshot(&cell("json")), record);
    assert_eq!(std::fs::read_to_string(out.join("results.csv")).unwrap(), results);

    // A different configuration is refused in the same directory.
    let err = nlbp(&["grid", "--images", s(&images), "--annotations", s(&anns), "--seed", "1", "--out", s(&out)]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_nlbp");
    let st = Command::new(bin)
        .args(["prepare", "--annotations", "/nonexistent/a.txt", "--images", "/nonexistent", "--out"])
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("/nonexistent/a.txt"));

    let st = Command::new(bin).args(["synth", "plates", "--count", "1", "--out"]).arg(tmp.path().join("p")).env("NLBP_WORKERS", "1").output().unwrap();
    assert_eq!(st.status.code(), Some(0));
    assert!(tmp.path().join("p/images/f0000.png").is_file());
}
