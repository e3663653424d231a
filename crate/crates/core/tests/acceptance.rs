//! Acceptance suite: one PASS/FAIL line per criterion, offline, mock
//! backend only. Exits non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::hp::fd_gradient;
use common::oracles::{checkerboard, lowres_spec, oracle_jitter, oracle_lowres, Q};
use stic_core::corruption::{self, corrupt_jitter, CorruptionSpec, ImageBuffer};
use stic_core::genclient::{mock_generate, GenerationRequest, MockBackend};
use stic_core::losscore::*;
use stic_core::pipeline::{validate_dataset, PipelineConfig, PipelineError, Schema};
use stic_core::prompts::PromptRegistry;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn loss_reduction() -> Outcome {
    let recs = common::random_records(1001, 10_000);
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for lambda in [0.01, 0.1, 1.0] {
        let cfg = LossConfig::new(lambda, 0.0).map_err(|e| e.to_string())?;
        for r in &recs {
            worst = worst.max((stic_loss(r, &cfg) - dpo_loss(r, lambda)).abs());
        }
    }
    let elapsed = started.elapsed();
    check(worst <= 1e-12, || format!("max |stic - dpo| = {worst:e}"))?;
    check(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("10000 records x 3 lambdas, max abs diff {worst:e}, {elapsed:?}"))
}

fn gradient_correctness() -> Outcome {
    let recs = common::random_records(1002, 500);
    let mut worst_rel: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for (i, rec) in recs.iter().enumerate() {
        // Every record is checked under every (lambda, alpha) pair.
        for lambda in [0.01, 0.1, 1.0] {
            for alpha in [0.0, 1.0 / 1024.0, 0.1] {
                let cfg = LossConfig::new(lambda, alpha).map_err(|e| e.to_string())?;
                let grad = stic_loss_grad(rec, &cfg);
                let g = grad.as_array();
                let fd = fd_gradient(rec, lambda, alpha, 1e-6);
                for k in 0..4 {
                    let rel = (g[k] - fd[k]).abs() / g[k].abs();
                    check(rel <= 1e-6, || format!("record {i} lambda {lambda} alpha {alpha} component {k}: {} vs {}", g[k], fd[k]))?;
                    worst_rel = worst_rel.max(rel);
                }
                worst_sum = worst_sum.max((grad.sum() + alpha).abs());
            }
        }
    }
    check(worst_sum <= 1e-12, || format!("component sum off by {worst_sum:e}"))?;
    Ok(format!("500 records x 9 configs, max rel err {worst_rel:e}, max |sum + alpha| {worst_sum:e}"))
}

fn stability() -> Outcome {
    let l0 = logistic_loss(0.0).map_err(|e| e.to_string())?;
    check((l0 - std::f64::consts::LN_2).abs() <= 1e-15, || format!("l(0) = {l0}"))?;
    for t in [1e6, -1e6] {
        let v = logistic_loss(t).map_err(|e| e.to_string())?;
        check(v.is_finite(), || format!("l({t}) = {v}"))?;
    }
    let n = 1_000_000u32;
    let mut prev = f64::INFINITY;
    for i in 0..=n {
        let t = -1e6 + 2e6 * i as f64 / n as f64;
        let v = logistic_loss(t).map_err(|e| e.to_string())?;
        check(v.is_finite() && v >= 0.0, || format!("l({t}) = {v}"))?;
        check(v <= prev, || format!("not monotone at {t}"))?;
        prev = v;
    }
    let rec = PreferenceLogprobRecord::new("x", -1e6, -1.0, -1.0, -1e6).map_err(|e| e.to_string())?;
    let cfg = LossConfig::new(1.0, 0.1).map_err(|e| e.to_string())?;
    let loss = stic_loss(&rec, &cfg);
    let grad = stic_loss_grad(&rec, &cfg).as_array();
    check(loss.is_finite() && grad.iter().all(|g| g.is_finite()), || "non-finite at margin -2e6".into())?;
    Ok(format!("l(0) = {l0}, 1000001-point sweep over [-1e6, 1e6] finite and monotone"))
}

fn algorithm_one(rt: &tokio::runtime::Runtime) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let images = dir.path().join("images");
    common::write_images(&images, 200);
    let cfg = PipelineConfig {
        seed: 42,
        ..PipelineConfig::default()
    };
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let started = Instant::now();
    rt.block_on(common::run_pref(&images, &a, &cfg, &MockBackend::new(42), false))
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    rt.block_on(common::run_pref(&images, &b, &cfg, &MockBackend::new(42), false))
        .map_err(|e| e.to_string())?;

    let rows = common::read_lines(&a);
    check(rows.len() == 200, || format!("{} rows", rows.len()))?;
    let good = &PromptRegistry::builtin().good_prompt().text;
    let mut bad = 0;
    for row in &rows {
        let clean = ImageBuffer::open(&images.join(row["image"].as_str().unwrap())).map_err(|e| e.to_string())?;
        let expected = mock_generate(42, &GenerationRequest::new(good.clone(), Some(clean.clone()), &cfg.decoding));
        check(row["meta"]["chosen_input_digest"] == clean.digest(), || format!("{}: preferred input was not the clean image", row["image"]))?;
        check(row["chosen"] == expected.text.as_str(), || format!("{}: preferred response not from clean image + step-by-step prompt", row["image"]))?;
        if row["provenance"]["type"] == "bad_prompt" {
            bad += 1;
        }
    }
    check((70..=130).contains(&bad), || format!("bad-prompt branch count {bad}"))?;
    let same = std::fs::read(&a).map_err(|e| e.to_string())? == std::fs::read(&b).map_err(|e| e.to_string())?;
    check(same, || "rerun differs".into())?;
    check(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("200 images, bad-prompt branch {bad}, corruption never on preferred path, rerun identical, {elapsed:?}"))
}

fn algorithm_two(rt: &tokio::runtime::Runtime) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().join("root");
    let sft_path = dir.path().join("sft.jsonl");
    common::write_sft(&sft_path, &root, 100);
    let sft = common::read_lines(&sft_path);
    let cfg = PipelineConfig {
        seed: 77,
        ..PipelineConfig::default()
    };
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    rt.block_on(common::run_infuse(&sft_path, &root, 5, &a, &cfg, &MockBackend::new(77)))
        .map_err(|e| e.to_string())?;
    rt.block_on(common::run_infuse(&sft_path, &root, 5, &b, &cfg, &MockBackend::new(77)))
        .map_err(|e| e.to_string())?;
    let rows = common::read_lines(&a);
    check(rows.len() == 5, || format!("{} rows", rows.len()))?;
    for row in &rows {
        let src = sft.iter().find(|s| s["id"] == row["id"]).ok_or("unknown id")?;
        let d = row["description"].as_str().unwrap();
        let instr = src["conversations"][0]["value"].as_str().unwrap();
        check(row["prompt"].as_str() == Some(&format!("Image description: {d}\n{instr}")), || format!("{}: template mismatch", row["id"]))?;
        let same = row["completion"].as_str().map(str::as_bytes) == src["conversations"][1]["value"].as_str().map(str::as_bytes);
        check(same, || format!("{}: completion altered", row["id"]))?;
    }
    let ids = |p| common::read_lines(p).iter().map(|r| r["id"].clone()).collect::<Vec<_>>();
    check(ids(&a) == ids(&b), || "subsample not seed-stable".into())?;
    let report = validate_dataset(&a, Schema::Infused).map_err(|e| e.to_string())?;
    check(report.is_valid(), || format!("{} violations", report.violations.len()))?;
    Ok("5 of 100 subsampled stably, exact template and completions, validate clean".into())
}

fn corruption_goldens() -> Outcome {
    let board = checkerboard(8);
    for floor in [8, 1] {
        let got = corruption::apply(&board, &lowres_spec(1, 2, floor)).map_err(|e| e.to_string())?;
        check(got == oracle_lowres(&board, Q::new(1, 2), floor), || format!("checkerboard mismatch at floor {floor}"))?;
    }
    let px = ImageBuffer::new(1, 1, vec![200, 40, 40]).map_err(|e| e.to_string())?;
    let got = corrupt_jitter(&px, &CorruptionSpec::jitter(0.0, 1.0, 0.5, 1.0)).map_err(|e| e.to_string())?;
    let want = oracle_jitter([200, 40, 40], 0.0, 1.0, 0.5, 1.0).map(|c| c.round() as u8);
    check(got.pixel(0, 0) == want, || format!("jitter pixel {:?} vs oracle {want:?}", got.pixel(0, 0)))?;
    check(want == [100, 20, 20], || format!("oracle gave {want:?}"))?;

    let img = common::pattern_image(3, 32, 32);
    let id = corrupt_jitter(&img, &CorruptionSpec::jitter(0.0, 1.0, 1.0, 1.0)).map_err(|e| e.to_string())?;
    let max_dev = img.pixels().iter().zip(id.pixels()).map(|(a, b)| a.abs_diff(*b)).max().unwrap_or(0);
    check(max_dev <= 1, || format!("identity jitter deviates by {max_dev}"))?;
    let lr = corruption::apply(&img, &lowres_spec(1, 1, 8)).map_err(|e| e.to_string())?;
    check(lr == img, || "lowres factor 1 is not the identity".into())?;
    Ok(format!("checkerboard (floors 8 and 1) and (200,40,40) match oracles exactly; identity max deviation {max_dev}"))
}

fn resume_equivalence(rt: &tokio::runtime::Runtime) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let images = dir.path().join("images");
    common::write_images(&images, 100);
    let cfg = PipelineConfig {
        seed: 9,
        ..PipelineConfig::default()
    };
    let full = dir.path().join("full.jsonl");
    rt.block_on(common::run_pref(&images, &full, &cfg, &MockBackend::new(9), false))
        .map_err(|e| e.to_string())?;

    let out = dir.path().join("resumed.jsonl");
    let failing = common::FailAfter::new(9, 2 * 25);
    match rt.block_on(common::run_pref(&images, &out, &cfg, &failing, false)) {
        Err(PipelineError::Aborted { .. }) => {}
        other => return Err(format!("interrupted run did not abort: {:?}", other.map(|o| o.rows))),
    }
    let res = rt
        .block_on(common::run_pref(&images, &out, &cfg, &MockBackend::new(9), true))
        .map_err(|e| e.to_string())?;
    let same = std::fs::read(&full).map_err(|e| e.to_string())? == std::fs::read(&out).map_err(|e| e.to_string())?;
    check(same, || "resumed output differs from uninterrupted run".into())?;
    Ok(format!(
        "interrupted after {} of 100 items, resumed {}, output byte-identical",
        100 - res.generated,
        res.generated
    ))
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("loss reduction", Box::new(loss_reduction)),
        ("gradient correctness", Box::new(gradient_correctness)),
        ("stability", Box::new(stability)),
        ("algorithm-1 fidelity", Box::new(|| algorithm_one(&rt))),
        ("algorithm-2 fidelity", Box::new(|| algorithm_two(&rt))),
        ("corruption goldens", Box::new(corruption_goldens)),
        ("resume equivalence", Box::new(|| resume_equivalence(&rt))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
