use std::path::Path;
use std::process::Command;

fn spikerep(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_spikerep")).args(args).output().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("config.json");
    std::fs::write(
        &p,
        r#"{
            "synth_n_units": 3, "synth_rows": 6, "synth_cols": 2, "synth_duration_s": 4.0,
            "snippet_t": 31, "snippet_c": 5, "aug_crop_channels": 3,
            "aug_temporal_jitter_max": 2, "aug_collision_offset_max": 5,
            "model_embed_dim": 8, "model_layers": 1, "model_heads": 2, "model_ff_dim": 16,
            "model_rep_dim": 8, "model_proj_dim": 8, "model_pred_hidden_dim": 8, "model_dae_hidden_dim": 8,
            "train_epochs": 2, "train_batch_size": 16, "train_warmup_epochs": 1,
            "gmm_components": 3
        }"#,
    )
    .unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn synth_train_sort_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().to_str().unwrap();
    for sub in ["synth", "preprocess", "detect", "extract", "train", "sort", "eval"] {
        let o = spikerep(&[sub, "--config", &cfg, "--seed", "3", "--out", out]);
        assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
        let run: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
        assert_eq!(run["subcommand"], sub);
        assert_eq!(run["status"], "ok");
    }
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval.json")).unwrap()).unwrap();
    for key in ["accuracy", "recall", "precision"] {
        assert!(eval[key]["mean"].is_number(), "{key}");
        assert!(eval["units"][0][key].is_number(), "{key}");
    }
}

#[test]
fn embed_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().to_str().unwrap();
    for sub in ["synth", "detect", "extract", "train"] {
        assert!(spikerep(&[sub, "--config", &cfg, "--seed", "5", "--out", out]).status.success());
    }
    let mut files = Vec::new();
    for _ in 0..2 {
        assert!(spikerep(&["embed", "--config", &cfg, "--seed", "5", "--out", out]).status.success());
        files.push(std::fs::read(dir.path().join("embeddings.bin")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn failure_prints_error_json_and_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = spikerep(&["detect", "--out", out]);
    assert!(!o.status.success());
    let line = String::from_utf8_lossy(&o.stderr);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["error"]["kind"], "invalid");
    assert!(dir.path().join("run.json").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"no_such_key": 1}"#).unwrap();
    let o = spikerep(&["synth", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let v: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(v["error"]["kind"], "config");
}

#[test]
fn use_dae_without_denoiser_training_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.json");
    let text = std::fs::read_to_string(tiny_config(dir.path())).unwrap().replace("\"gmm_components\": 3", "\"gmm_components\": 3, \"alpha\": 0.0");
    std::fs::write(&cfg_path, text).unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let out = dir.path().to_str().unwrap();
    for sub in ["synth", "detect", "extract", "train"] {
        assert!(spikerep(&[sub, "--config", cfg, "--out", out]).status.success());
    }
    let o = spikerep(&["embed", "--config", cfg, "--use-dae", "--out", out]);
    assert!(!o.status.success());
    let v: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(v["error"]["kind"], "config");
}
