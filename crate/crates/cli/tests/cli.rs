use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mortss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mortss")).args(args).output().expect("binary runs")
}

fn mortss_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mortss")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok_in(dir: &Path, args: &[&str]) -> Output {
    let out = mortss_in(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn ok(args: &[&str]) -> Output {
    let out = mortss(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path -> contents, for every file under `root`.
fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn simulate(dir: &Path) -> PathBuf {
    let sim = dir.join("sim");
    ok(&["simulate", "--model", "lc", "--seed", "7", "--age-groups", "4", "--periods", "25", "--out", s(&sim)]);
    sim.join("panel.csv")
}

#[test]
fn simulate_then_gibbs_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut snaps = Vec::new();
    for run in ["a", "b"] {
        let root = tmp.path().join(run);
        fs::create_dir_all(&root).unwrap();
        ok_in(&root, &["simulate", "--model", "lc", "--seed", "7", "--age-groups", "4", "--periods", "25", "--out", "sim"]);
        ok_in(&root, &["fit-gibbs", "--model", "lc", "--data", "sim/panel.csv", "--iters", "120", "--burnin", "20", "--seed", "3", "--out", "fit"]);
        snaps.push(snapshot(&root));
    }
    assert_eq!(snaps[0], snaps[1]);
    let names: Vec<String> = snaps[0].iter().map(|(p, _)| p.display().to_string()).collect();
    for f in ["config.json", "manifest.json", "panel.json", "summary.csv", "chain/params.csv", "chain/kappa.csv", "chain/meta.json"] {
        assert!(names.iter().any(|n| n == &format!("fit/{f}")), "missing {f}");
    }
}

#[test]
fn resume_is_a_no_op_when_complete_and_continues_otherwise() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = |iters: &'static str| {
        vec![
            "fit-gibbs", "--model", "lc", "--data", "../sim/panel.csv", "--iters", iters, "--burnin", "10", "--seed",
            "4", "--checkpoint-every", "30", "--out", "run",
        ]
    };
    let with_resume = |mut v: Vec<&'static str>| {
        v.push("--resume");
        v
    };
    simulate(tmp.path());
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    ok_in(&a, &args("90"));
    let full = a.join("run");
    let before = snapshot(&full);
    let mtime = fs::metadata(full.join("manifest.json")).unwrap().modified().unwrap();
    ok_in(&a, &with_resume(args("90")));
    assert_eq!(snapshot(&full), before);
    assert_eq!(fs::metadata(full.join("manifest.json")).unwrap().modified().unwrap(), mtime);

    // An interrupted run: chain cut back to sweep 60, no manifest.
    ok_in(&b, &args("90"));
    let part = b.join("run");
    fs::remove_file(part.join("manifest.json")).unwrap();
    for f in ["chain/params.csv", "chain/kappa.csv"] {
        let text = fs::read_to_string(part.join(f)).unwrap();
        let kept: Vec<&str> = text.lines().take(61).collect();
        fs::write(part.join(f), kept.join("\n") + "\n").unwrap();
    }
    ok_in(&b, &with_resume(args("90")));
    assert_eq!(snapshot(&part), before);

    let out = mortss_in(&a, &with_resume(args("100")));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    // Configuration: missing seed, bad burn-in, unknown model.
    assert_eq!(mortss(&["simulate", "--model", "lc", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(mortss(&["simulate", "--model", "lcx", "--seed", "1", "--out", s(&out)]).status.code(), Some(2));
    let data = simulate(tmp.path());
    let bad = mortss(&["fit-gibbs", "--model", "lc", "--data", s(&data), "--iters", "10", "--burnin", "10", "--seed", "1", "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(!out.join("manifest.json").exists());
    // Data: malformed file.
    let broken = tmp.path().join("broken.csv");
    fs::write(&broken, "year,age_start,age_width,rate\n1900,0,1,abc\n").unwrap();
    let r = mortss(&["svd-fit", "--data", s(&broken), "--groups", "0:1", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(3));
    // Numerical: a rank-1 fit of a panel with no time variation.
    let flat = tmp.path().join("flat.csv");
    fs::write(&flat, "year,age_start,age_width,rate\n1,0,1,0.01\n1,1,4,0.001\n2,0,1,0.01\n2,1,4,0.001\n3,0,1,0.01\n3,1,4,0.001\n").unwrap();
    let r = mortss(&["svd-fit", "--data", s(&flat), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(4), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn config_file_with_flag_override_and_downstream_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path());
    let cfg = tmp.path().join("run.json");
    fs::write(
        &cfg,
        format!(r#"{{"model":"lc_h","data":"{}","iters":500,"burnin":20,"seed":9}}"#, s(&data)),
    )
    .unwrap();
    let fit = tmp.path().join("fit");
    ok(&["fit-gibbs", "--config", s(&cfg), "--iters", "60", "--out", s(&fit)]);
    let echoed: serde_json::Value = serde_json::from_slice(&fs::read(fit.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["iters"], 60);
    assert_eq!(echoed["model"], "lc_h");
    assert_eq!(fs::read_to_string(fit.join("chain/params.csv")).unwrap().lines().count(), 61);

    let out = ok(&["dic", "--chain", s(&fit)]);
    let line = String::from_utf8(out.stdout).unwrap();
    let rec: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(rec["model"], "LC_H");
    let (d, p, b) = (rec["dic"].as_f64().unwrap(), rec["p_d"].as_f64().unwrap(), rec["d_bar"].as_f64().unwrap());
    assert!((d - (b + p)).abs() < 1e-9 * d.abs().max(1.0));
    assert_eq!(rec.as_object().unwrap().len(), 4);

    let fc = tmp.path().join("fc");
    ok(&["forecast", "--chain", s(&fit), "--seed", "2", "--jumpoff", "actual", "--dump-samples", "--out", s(&fc)]);
    let fan = fs::read_to_string(fc.join("fan.csv")).unwrap();
    assert_eq!(fan.lines().next().unwrap(), "horizon,age_group,mean,q025,q500,q975");
    assert_eq!(fan.lines().count(), 1 + 30 * 4);
    assert!(fc.join("samples.csv").exists());
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(fc.join("forecast.json")).unwrap()).unwrap();
    assert_eq!(meta["horizon"], 30);
    assert_eq!(meta["jumpoff"], "actual");
    assert_eq!(meta["draws"], 40);
}

#[test]
fn multiple_chains_get_their_own_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path());
    let out = tmp.path().join("multi");
    let r = Command::new(env!("CARGO_BIN_EXE_mortss"))
        .args(["fit-gibbs", "--model", "lc", "--data", s(&data), "--iters", "40", "--burnin", "5", "--seed", "1", "--chains", "3", "--out", s(&out)])
        .env("MORTSS_THREADS", "2")
        .output()
        .unwrap();
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let a = fs::read(out.join("chain_1/params.csv")).unwrap();
    let b = fs::read(out.join("chain_2/params.csv")).unwrap();
    assert_ne!(a, b);
    for i in 1..=3 {
        assert!(out.join(format!("summary_{i}.csv")).exists());
    }
    let bad = Command::new(env!("CARGO_BIN_EXE_mortss"))
        .args(["fit-gibbs", "--model", "lc", "--data", s(&data), "--iters", "40", "--burnin", "5", "--seed", "1", "--chains", "2", "--out", s(&out)])
        .env("MORTSS_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn mle_and_life_table_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path());
    let mle = tmp.path().join("mle");
    ok(&["fit-mle", "--model", "lc", "--data", s(&data), "--out", s(&mle)]);
    let trace = fs::read_to_string(mle.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "iter,loglik,grad_norm");
    let lls: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(lls.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(mortss(&["fit-mle", "--model", "lcsv", "--data", s(&data), "--out", s(&mle)]).status.code(), Some(2));

    let lt = tmp.path().join("lt");
    ok(&["lifetable", "--data", s(&data), "--year", "3", "--out", s(&lt)]);
    let table = fs::read_to_string(lt.join("lifetable.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "age_start,n,q,l,d,L,T,e");
    assert_eq!(table.lines().count(), 5);
    assert_eq!(mortss(&["lifetable", "--data", s(&data), "--year", "1800", "--out", s(&lt)]).status.code(), Some(2));
}

#[test]
fn particle_sampler_runs_and_forecasts_volatility() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    ok(&["simulate", "--model", "lcsv", "--seed", "2", "--age-groups", "3", "--periods", "15", "--out", s(&sim)]);
    let fit = tmp.path().join("fit");
    ok(&[
        "fit-pmcmc", "--model", "lcsv", "--data", s(&sim.join("panel.csv")), "--iters", "8", "--burnin", "2",
        "--particles", "24", "--n-pimh", "2", "--seed", "6", "--out", s(&fit),
    ]);
    assert!(fit.join("chain/gamma.csv").exists());
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(fit.join("chain/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["pimh_proposed"], 16);
    let fc = tmp.path().join("fc");
    ok(&["forecast", "--chain", s(&fit), "--seed", "1", "--horizon", "4", "--out", s(&fc)]);
    assert_eq!(fs::read_to_string(fc.join("fan.csv")).unwrap().lines().count(), 1 + 4 * 3);
    assert_eq!(
        mortss(&["fit-pmcmc", "--model", "lc", "--data", s(&sim.join("panel.csv")), "--seed", "1", "--out", s(&fc)]).status.code(),
        Some(2)
    );
}
