use super::*;

fn config(kind: ExperimentKind, dir: &Path, overrides: Value) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind, 5, dir);
    c.overrides = overrides.as_object().cloned().unwrap_or_default();
    c
}

fn read_all(files: &[PathBuf]) -> Vec<(String, Vec<u8>)> {
    files
        .iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(p).unwrap()))
        .collect()
}

#[test]
fn names_round_trip() {
    for k in ExperimentKind::ALL {
        assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        assert_eq!(serde_json::to_value(k).unwrap(), json!(k.name()));
    }
    assert!("pt".parse::<ExperimentKind>().is_err());
    let cat = catalog();
    assert_eq!(cat.len(), 7);
    assert!(cat.iter().all(|e| !e.outputs.is_empty() && !e.description.is_empty()));
}

#[test]
fn config_is_strict() {
    let c: ExperimentConfig = toml::from_str("experiment = \"transport\"\nseed = 3\n[overrides]\nparticles = 8\n").unwrap();
    assert_eq!(c.experiment, ExperimentKind::Transport);
    assert_eq!(c.output_dir, PathBuf::from("out"));
    c.validate().unwrap();
    let s: TransportExperimentSettings = c.settings().unwrap();
    assert_eq!(s.particles, 8);
    assert_eq!(s.target_mean, 2.0);

    assert!(toml::from_str::<ExperimentConfig>("experiment = \"transport\"\nsed = 3\n").is_err());
    assert!(toml::from_str::<ExperimentConfig>("experiment = \"nope\"\n").is_err());
    let bad: ExperimentConfig = toml::from_str("experiment = \"transport\"\n[overrides]\nparticle = 8\n").unwrap();
    assert!(matches!(bad.validate(), Err(Error::InvalidArgument(_))));
    for k in ExperimentKind::ALL {
        ExperimentConfig::new(k, 0, "x").validate().unwrap();
    }
}

#[test]
fn transport_run_writes_files_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&config(ExperimentKind::Transport, dir.path(), json!({}))).unwrap();
    assert!(out.passed(), "{:?}", out.failures());
    let names: Vec<_> = read_all(&out.files).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["particles.csv", "loss.csv", "map.json", "checks.json"]);
    let again = run_experiment(&config(ExperimentKind::Transport, dir.path(), json!({}))).unwrap();
    assert_eq!(read_all(&out.files), read_all(&again.files));
}

#[test]
fn small_runs_of_every_experiment() {
    let cases = [
        (ExperimentKind::Theorylab, json!({"noise_reps": 500, "younes_reps": 100, "younes_steps": 200, "bound_steps": 500, "bound_reps": 20})),
        (ExperimentKind::OnlineNormals, json!({"t_max": 200, "seeds": 3})),
        (ExperimentKind::ImhWf, json!({"rounds": 4, "eval_steps": 200})),
        (ExperimentKind::PtScaling, json!({"dims": [1, 4], "sweeps": 100, "curse_pairs": 100})),
        (ExperimentKind::PtVariational, json!({"seeds": 2})),
        (ExperimentKind::EstimatorBench, json!({"reps": 200, "seeds": 3, "pair_draws": 100})),
    ];
    for (kind, overrides) in cases {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&config(kind, dir.path(), overrides)).unwrap();
        let entry = catalog().into_iter().find(|e| e.name == kind.name()).unwrap();
        for name in entry.outputs {
            assert!(dir.path().join(name).is_file(), "{kind}: missing {name}");
        }
        assert_eq!(out.files.len(), entry.outputs.len(), "{kind}");
        assert!(!out.checks.is_empty());
    }
}

#[test]
fn bad_overrides_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_experiment(&config(ExperimentKind::PtScaling, dir.path(), json!({"dims": [4]})));
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
    let r = run_experiment(&config(ExperimentKind::Transport, dir.path(), json!({"target_sd": -1.0})));
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}
