use std::path::Path;
use std::process::{Command, Output};

fn overshadow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_overshadow")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a config small enough to train in well under a second.
fn tiny_config(dir: &Path) -> String {
    let o = overshadow(&["config", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    v["corpus"]["groups_per_point"] = 6.into();
    v["model"]["d_model"] = 16.into();
    v["model"]["n_layers"] = 1.into();
    v["model"]["n_heads"] = 2.into();
    v["train"]["max_steps"] = 300.into();
    v["train"]["lr"] = 1e-2.into();
    v["out_dir"] = dir.join("out").to_string_lossy().into_owned().into();
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn missing_corpus_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = overshadow(&["train", "--seed", "1", "--out", dir.path().to_str().unwrap(), "--corpus", "/nonexistent/corpus.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: corpus not found"), "{err}");
}

#[test]
fn seed_is_mandatory() {
    let o = overshadow(&["gen"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error: invalid config"));
}

#[test]
fn usage_errors_are_distinct_from_missing_inputs() {
    let o = overshadow(&["fit", "--variable", "Q", "--rates", "x.csv"]);
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = |out: &Path| {
        let out_s = out.to_str().unwrap();
        let gen = overshadow(&["gen", "--config", &cfg, "--out", out_s]);
        assert!(gen.status.success(), "{}", stderr(&gen));
        let corpus = out.join("corpus.jsonl");
        let corpus_s = corpus.to_str().unwrap();
        let train = overshadow(&["train", "--config", &cfg, "--out", out_s, "--corpus", corpus_s]);
        assert!(train.status.success(), "{}", stderr(&train));
        let ckpt = out.join("model.ovlm");
        let ckpt_s = ckpt.to_str().unwrap();
        for args in [
            vec!["probe", "--checkpoint", ckpt_s, "--corpus", corpus_s],
            vec!["coda-eval", "--checkpoint", ckpt_s, "--corpus", corpus_s, "--alpha", "0.05"],
            vec!["detect", "--checkpoint", ckpt_s, "--corpus", corpus_s, "--jobs", "2"],
            vec!["finetune", "--base", ckpt_s, "--corpus", corpus_s],
        ] {
            let mut full = args.clone();
            full.extend(["--config", &cfg, "--out", out_s]);
            let o = overshadow(&full);
            assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        }
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a);
    run(&b);
    for name in ["corpus.jsonl", "model.ovlm", "finetuned.ovlm", "train_log.json", "rates.csv", "coda_eval.csv", "detect.json"] {
        let (x, y) = (std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
        assert!(x == y, "{name} differs between runs");
    }
    let rates = std::fs::read_to_string(a.join("rates.csv")).unwrap();
    let mut lines = rates.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "P,L,S,RR,HR,R,other_err,n_dom,n_sup");
    let coda = std::fs::read_to_string(a.join("coda_eval.csv")).unwrap();
    assert!(coda.lines().nth(1).unwrap() == "probe_class,em_greedy,em_coda,flag_rate,mean_indicator");
}

#[test]
fn fit_and_predict_from_a_rate_table() {
    let dir = tempfile::tempdir().unwrap();
    let rates = dir.path().join("rates.csv");
    let r = |p: f64| 0.3 * (p / 4.0f64).ln();
    let mut text = String::from("# config_hash=abc seed=9\nP,L,S,RR,HR,R,other_err,n_dom,n_sup\n");
    for p in [4.0, 8.0, 16.0] {
        text.push_str(&format!("{p},5,1000,1,{},{},0,10,2\n", r(p), r(p)));
    }
    std::fs::write(&rates, text).unwrap();
    let o = overshadow(&["fit", "--rates", rates.to_str().unwrap(), "--variable", "p"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit_path = dir.path().join("law_P.json");
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&fit_path).unwrap()).unwrap();
    assert!((fit["coef"].as_f64().unwrap() - 0.3).abs() < 1e-9);
    assert!((fit["x_c"].as_f64().unwrap() - 4.0).abs() < 1e-9);
    assert_eq!(fit["config_hash"], "abc");
    assert_eq!(fit["seed"], 9);

    let o = overshadow(&["predict", "--fit", fit_path.to_str().unwrap(), "--x", "2,8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let preds = std::fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
    let rows: Vec<&str> = preds.lines().collect();
    assert_eq!(rows[0], "# config_hash=abc seed=9");
    assert_eq!(rows[1], "x,r,raw");
    assert!(rows[2].starts_with("2,0,"));
    let r8: f64 = rows[3].split(',').nth(1).unwrap().parse().unwrap();
    assert!((r8 - 0.3 * 2f64.ln()).abs() < 1e-9);
}

#[test]
fn missing_fit_and_rates_exit_with_code_2() {
    let o = overshadow(&["predict", "--fit", "/nonexistent/law.json", "--x", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: fit not found"));
    let o = overshadow(&["fit", "--rates", "/nonexistent/rates.csv", "--variable", "L"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn grad_check_passes() {
    let o = overshadow(&["grad-check"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    let err: f64 = line.split_whitespace().next().unwrap().trim_start_matches("max_rel_error=").parse().unwrap();
    assert!(err < 1e-6, "{line}");
}
