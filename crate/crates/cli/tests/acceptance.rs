//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! The desk-scale stages generate a 2,100-clip corpus and train CAFNet on
//! it, so this target takes roughly a quarter of an hour on one core.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cafnet_autograd::nn::Ctx;
use cafnet_autograd::{Mode, Tape};
use cafnet_cli::gradcheck_rows;
use cafnet_core::corpus::{synth_fake, synth_real, AudioClip, ClipLabel, SynthesisConfig};
use cafnet_core::features::{chroma_from_power, chroma_stft, stft_power, Extractor, FeatureSet, Matrix, N_FRAMES};
use cafnet_core::metrics::{auc, eer, localisation_report, macro_ovr_auc, roc_curve};
use cafnet_core::models::{CafNetConfig, FeatureBatch, MfaanConfig, Model, ModelSpec};
use cafnet_core::training::{composite_loss, small_cafnet_config, LossWeights, Targets};
use cafnet_core::CLIP_SAMPLES;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const CAFNET_PARAMS: usize = 560_086;

#[derive(Default)]
struct Sheet {
    rows: Vec<(String, bool)>,
}

impl Sheet {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.rows.push((name.to_string(), pass));
    }
}

fn cafnet(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_cafnet")).current_dir(dir).args(args).output().expect("binary runs");
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "cafnet {args:?} failed:\n{text}\n{}", String::from_utf8_lossy(&out.stderr));
    text
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> String {
    std::fs::write(dir.join(name), body).unwrap();
    name.to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn f(v: &Value, path: &[&str]) -> f64 {
    path.iter().fold(v, |v, k| &v[*k]).as_f64().unwrap_or(f64::NAN)
}

fn parameter_counts(sheet: &mut Sheet) {
    let t = Instant::now();
    let (_, store) = Model::init::<f32>(&ModelSpec::Mfaan(MfaanConfig::default()), 42).unwrap();
    let n = store.count_params();
    let dt = t.elapsed();
    sheet.record("mfaan_parameter_count", n == 322_562 && dt < Duration::from_secs(1), format!("{n} (expected 322562) in {dt:.2?}"));

    let (_, store) = Model::init::<f32>(&ModelSpec::Cafnet(CafNetConfig::default()), 42).unwrap();
    let n = store.count_params();
    let pass = (490_000..=663_000).contains(&n) && n == CAFNET_PARAMS;
    sheet.record("cafnet_parameter_count", pass, format!("{n} (range 490000..=663000, frozen at {CAFNET_PARAMS})"));
}

fn gradient_suite(sheet: &mut Sheet) {
    let t = Instant::now();
    let rows = gradcheck_rows(10, false);
    let dt = t.elapsed();
    let failed: Vec<String> = rows.iter().filter(|r| !r.passed()).map(|r| format!("{} {:.2e}", r.name, r.max_rel_err)).collect();
    let loose = rows.iter().all(|r| r.threshold <= 1e-4 && r.seeds >= 10);
    let worst = rows.iter().map(|r| r.max_rel_err / r.threshold).fold(0.0, f64::max);
    sheet.record(
        "gradient_suite",
        failed.is_empty() && loose && dt < Duration::from_secs(120),
        format!("{} cases x 10 seeds, worst error/threshold {worst:.3}, failures {failed:?}, {dt:.1?}", rows.len()),
    );
}

fn max_diff(ours: &Matrix<f64>, oracle: &[f64]) -> f64 {
    ours.data.iter().zip(oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn tone(freq: f64) -> AudioClip {
    AudioClip::new((0..CLIP_SAMPLES).map(|i| (0.5 * (2.0 * PI * freq * i as f64 / 16_000.0).cos()) as f32).collect())
}

fn dsp_oracles(sheet: &mut Sheet) {
    let t = Instant::now();
    let ex = Extractor::shared();
    let cfg = SynthesisConfig::default();
    let (mel, lin) = (oracles::mel_triangles(40), oracles::linear_triangles(40));
    let mut worst = [0.0f64; 3];
    let mut frames_ok = true;
    for clip in [synth_real(3, &cfg), synth_fake(4, &cfg), tone(440.0)] {
        let spec = oracles::power_spectrogram(&clip.samples);
        frames_ok &= spec.1 == 251;
        let power = stft_power(&clip).unwrap();
        worst[0] = worst[0].max(max_diff(&ex.mfcc_raw(&power).unwrap(), &oracles::cepstra(&spec, &mel, 40)));
        worst[1] = worst[1].max(max_diff(&ex.lfcc_raw(&power).unwrap(), &oracles::cepstra(&spec, &lin, 40)));
        worst[2] = worst[2].max(max_diff(&chroma_from_power(&power), &oracles::chroma(&spec)));
    }
    let p = stft_power(&tone(1000.0)).unwrap();
    let peak = (0..p.rows).max_by(|&a, &b| p.at(a, 125).total_cmp(&p.at(b, 125))).unwrap();
    let c = chroma_stft(&tone(440.0)).unwrap();
    let a_class = (0..12).max_by(|&a, &b| c.at(a, 125).total_cmp(&c.at(b, 125))).unwrap();
    let dt = t.elapsed();
    let pass = worst.iter().all(|&w| w <= 1e-4) && frames_ok && N_FRAMES == 251 && peak == 32 && a_class == 9 && dt < Duration::from_secs(60);
    sheet.record(
        "dsp_oracles",
        pass,
        format!(
            "max abs err mfcc {:.1e} lfcc {:.1e} chroma {:.1e}; frames {N_FRAMES}; 1 kHz bin {peak}; 440 Hz class {a_class}; {dt:.1?}",
            worst[0], worst[1], worst[2]
        ),
    );
}

fn random_set(rng: &mut ChaCha8Rng, ties: bool) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(8..80);
    let shift = rng.random_range(0.0..1.5);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = labels
        .iter()
        .map(|&l| {
            let s: f64 = rng.random_range(0.0..1.0) + if l { shift } else { 0.0 };
            if ties { (s * 10.0).round() / 10.0 } else { s }
        })
        .collect();
    (scores, labels)
}

fn metrics_oracles(sheet: &mut Sheet) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (mut auc_err, mut eer_err, mut macro_err) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..100 {
        let (s, l) = random_set(&mut rng, i % 4 == 0);
        let curve = roc_curve(&s, &l).unwrap();
        auc_err = auc_err.max((auc(&curve) - oracles::auc_pairs(&s, &l)).abs());
        eer_err = eer_err.max((eer(&curve) - oracles::eer_grid(&s, &l, 400_000)).abs());

        let n = rng.random_range(6..50);
        let y: Vec<usize> = (0..n).map(|k| if k < 3 { k } else { rng.random_range(0..3) }).collect();
        let probs: Vec<Vec<f64>> = y
            .iter()
            .map(|&c| {
                let raw: Vec<f64> = (0..3).map(|k| rng.random_range(0.0..1.0) + if k == c { 0.4 } else { 0.0 }).collect();
                let z: f64 = raw.iter().sum();
                raw.iter().map(|v| v / z).collect()
            })
            .collect();
        let oracle: f64 = (0..3)
            .map(|c| {
                let sc: Vec<f64> = probs.iter().map(|p| p[c]).collect();
                oracles::auc_pairs(&sc, &y.iter().map(|&k| k == c).collect::<Vec<_>>())
            })
            .sum::<f64>()
            / 3.0;
        macro_err = macro_err.max((macro_ovr_auc(&probs, &y).unwrap() - oracle).abs());
    }
    let loc = localisation_report(&[[0.35, 0.64]], &[[0.3675, 0.6325]]).unwrap();
    let (ds, de) = ((loc.start.mae - 0.07).abs(), (loc.end.mae - 0.03).abs());
    let pass = auc_err <= 1e-9 && eer_err <= 1e-6 && macro_err <= 1e-9 && ds <= 1e-12 && de <= 1e-12;
    sheet.record(
        "metrics_oracles",
        pass,
        format!(
            "100 sets: AUC err {auc_err:.1e}, EER err {eer_err:.1e}, macro AUC err {macro_err:.1e}; localisation start {:.4} s end {:.4} s",
            loc.start.mae, loc.end.mae
        ),
    );
}

fn loss_arithmetic(sheet: &mut Sheet) {
    let w = LossWeights::default();
    let combined = w.combine(1.0, 0.5, 0.2);

    let spec = ModelSpec::Cafnet(small_cafnet_config());
    let (model, mut store) = Model::init::<f64>(&spec, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut m = |rows| Matrix::from_vec(rows, 251, (0..rows * 251).map(|_| rng.random_range(-1.0f32..1.0)).collect());
    let feats: Vec<FeatureSet> = (0..4).map(|_| FeatureSet { mfcc: m(40), lfcc: m(40), chroma: m(12) }).collect();
    let refs: Vec<&FeatureSet> = feats.iter().collect();
    let labels = [ClipLabel::real(), ClipLabel::fake(), ClipLabel::fake(), ClipLabel::real()];
    let mut tape = Tape::<f64>::new();
    let mut drop_rng = ChaCha8Rng::seed_from_u64(7);
    let mut cx = Ctx { tape: &mut tape, store: &mut store, mode: Mode::Train, rng: &mut drop_rng };
    let vars = model.forward(&mut cx, &FeatureBatch::new(&refs).unwrap()).unwrap();
    let terms = composite_loss(&mut tape, &vars, &Targets::new(&labels, 3), &w).unwrap();
    tape.backward(terms.temp.unwrap()).unwrap();
    let nonzero = tape.param_grads().iter().filter(|(_, g)| g.iter().any(|&v| v != 0.0)).count();

    sheet.record(
        "loss_arithmetic",
        combined == 1.26 && nonzero == 0,
        format!("combine(1.0, 0.5, 0.2) = {combined}; parameters with temporal gradient on a real/fake batch: {nonzero}"),
    );
}

struct Desk {
    dir: PathBuf,
    report: Value,
    train_time: Duration,
}

fn desk_cfg(dir: &Path, name: &str, extra: &str) -> String {
    write_cfg(dir, name, &format!("corpus_dir = corpus_a\ncache_dir = cache_a\n{extra}"))
}

fn desk_run(sheet: &mut Sheet, root: &Path) -> Desk {
    let t = Instant::now();
    let cfg = desk_cfg(root, "a.cfg", "checkpoint = runs/a.cafw\nreport = runs/a_test.json\n");
    cafnet(root, &["--config", &cfg, "gen"]);
    cafnet(root, &["--config", &cfg, "extract"]);
    let t_train = Instant::now();
    cafnet(root, &["--config", &cfg, "train"]);
    let train_time = t_train.elapsed();
    cafnet(root, &["--config", &cfg, "eval"]);
    let total = t.elapsed();

    let epochs = std::fs::read_to_string(root.join("runs/a.log.jsonl")).unwrap().lines().count();
    let report = read_json(&root.join("runs/a_test.json"));
    let (acc, mauc, mae) = (f(&report, &["accuracy"]), f(&report, &["macro_auc"]), f(&report, &["localisation", "overall", "mae"]));
    let pass = acc >= 0.85 && mauc >= 0.95 && mae <= 0.20 && epochs <= 15 && total < Duration::from_secs(30 * 60);
    sheet.record(
        "desk_scale_learnability",
        pass,
        format!("test accuracy {acc:.4}, macro AUC {mauc:.4}, boundary MAE {mae:.3} s, {epochs} epochs, {total:.0?} end to end"),
    );
    Desk { dir: root.to_path_buf(), report, train_time }
}

fn determinism(sheet: &mut Sheet, desk: &Desk) {
    let root = &desk.dir;
    let mut outputs = Vec::new();
    for run in ["det1", "det2"] {
        let cfg = desk_cfg(root, &format!("{run}.cfg"), &format!("checkpoint = {run}/model.cafw\nmax_epochs = 2\n"));
        cafnet(root, &["--config", &cfg, "--seed", "42", "--deterministic", "train"]);
        let read = |p: &str| std::fs::read(root.join(run).join(p)).unwrap();
        outputs.push((read("model.log.jsonl"), read("model.cafw"), read("model.cafw.json")));
    }
    let same = outputs[0] == outputs[1];
    let fast = desk.train_time < Duration::from_secs(10 * 60);
    sheet.record(
        "determinism",
        same && fast,
        format!(
            "two seed-42 deterministic runs: log, checkpoint and sidecar {}; desk-scale training took {:.0?}",
            if same { "byte-identical" } else { "DIFFER" },
            desk.train_time
        ),
    );
}

const DOMAIN_B: &str = "corpus_dir = corpus_b
cache_dir = cache_b
n_train = 600
n_val = 150
n_test = 300
f0_range = 180, 320
formant1_range = 350, 1000
formant2_range = 1100, 2700
formant3_range = 2700, 3800
am_rate_range = 5, 8
phase_jitter = 0.25
quant_bits = 6
comb_range = 3000, 4500
comb_spacing = 250
comb_level = 0.02
artefact_strength = 0.6
master_seed = 7
";

fn fine_tuning(sheet: &mut Sheet, desk: &Desk) {
    let root = &desk.dir;
    let before_b = write_cfg(root, "b_before.cfg", &format!("{DOMAIN_B}checkpoint = runs/a.cafw\nreport = runs/a_on_b.json\n"));
    cafnet(root, &["--config", &before_b, "gen"]);
    cafnet(root, &["--config", &before_b, "extract"]);
    cafnet(root, &["--config", &before_b, "eval"]);
    let tuned = write_cfg(root, "b_tuned.cfg", &format!("{DOMAIN_B}checkpoint = runs/b.cafw\nreport = runs/b_on_b.json\n"));
    let out = cafnet(root, &["--config", &tuned, "train", "--finetune", "runs/a.cafw"]);
    cafnet(root, &["--config", &tuned, "eval"]);
    let back_on_a = desk_cfg(root, "b_on_a.cfg", "checkpoint = runs/b.cafw\nreport = runs/b_on_a.json\n");
    cafnet(root, &["--config", &back_on_a, "eval"]);

    let acc_before = f(&read_json(&root.join("runs/a_on_b.json")), &["accuracy"]);
    let acc_after = f(&read_json(&root.join("runs/b_on_b.json")), &["accuracy"]);
    let auc_a_before = f(&desk.report, &["macro_auc"]);
    let auc_a_after = f(&read_json(&root.join("runs/b_on_a.json")), &["macro_auc"]);
    let groups_ok = out.contains("group backbone lr 1e-5") && out.contains("group heads    lr 1e-4");
    let pass = acc_after - acc_before >= 0.10 && auc_a_after < auc_a_before && groups_ok;
    sheet.record(
        "fine_tuning",
        pass,
        format!(
            "domain B accuracy {acc_before:.4} -> {acc_after:.4} ({:+.1} points); domain A macro AUC {auc_a_before:.4} -> {auc_a_after:.4}; groups printed {groups_ok}",
            100.0 * (acc_after - acc_before)
        ),
    );
}

fn trust_gate(sheet: &mut Sheet, desk: &Desk) {
    let g = &desk.report["trust_gate"];
    let (trusted, untrusted) = (g["trusted"].as_u64().unwrap_or(0), g["untrusted"].as_u64().unwrap_or(0));
    let (te, ue) = (g["trusted_mean_error"].as_f64(), g["untrusted_mean_error"].as_f64());
    let pass = matches!((te, ue), (Some(t), Some(u)) if u > t);
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3} s"));
    sheet.record(
        "trust_gate",
        pass,
        format!(
            "half-truth test clips: {trusted} trusted (mean error {}), {untrusted} untrusted (mean error {})",
            fmt(te),
            fmt(ue)
        ),
    );
}

#[test]
fn acceptance() {
    let mut sheet = Sheet::default();
    parameter_counts(&mut sheet);
    gradient_suite(&mut sheet);
    dsp_oracles(&mut sheet);
    metrics_oracles(&mut sheet);
    loss_arithmetic(&mut sheet);

    let root = tempfile::tempdir().unwrap();
    let desk = desk_run(&mut sheet, root.path());
    determinism(&mut sheet, &desk);
    fine_tuning(&mut sheet, &desk);
    trust_gate(&mut sheet, &desk);

    let failed: Vec<&str> = sheet.rows.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    println!("{} of {} criteria pass", sheet.rows.len() - failed.len(), sheet.rows.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
