use std::process::Command;

use radiobc::bits::Bits;
use radiobc::broadcast::multi_message_known;
use radiobc::constants::Constants;
use radiobc::engine::EngineConfig;
use radiobc::graph::{generate_graph, serialize_graph, GraphFamily};
use radiobc::gst::build_gst_oracle;
use radiobc::primitives::NoisePolicy;

fn radiobc() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_radiobc"));
    c.env_remove("RADIOBC_SEED");
    c
}

const CONFIG: &str = r#"
pipeline = "known"
ks = [2]
seeds = { start = 0, count = 2 }

[[graphs]]
family = "grid"
rows = 3
cols = 4
"#;

#[test]
fn run_prints_csv_and_honors_seed_sources() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = radiobc().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "pipeline,graph,n,D,k,seed,completion_round,success,stage_breakdown");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("known,grid3x4,12,5,2,0,"));

    let flag = radiobc().args(["run", "--seed", "9", "--config"]).arg(&cfg).output().unwrap();
    let env = radiobc().env("RADIOBC_SEED", "9").args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(flag.stdout, env.stdout);
    assert!(String::from_utf8(flag.stdout).unwrap().contains(",9,"));

    let bad = radiobc().args(["run", "--constants", "nope=1", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn validate_gst_accepts_oracle_and_rejects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let g = generate_graph(&GraphFamily::Grid { rows: 4, cols: 4 }, 0).unwrap();
    let labels = build_gst_oracle(&g, 0);
    let (gp, lp) = (dir.path().join("g.txt"), dir.path().join("l.txt"));
    std::fs::write(&gp, serialize_graph(&g)).unwrap();
    std::fs::write(&lp, labels.export()).unwrap();
    let ok = radiobc().args(["validate-gst", "--graph"]).arg(&gp).arg("--labels").arg(&lp).output().unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8(ok.stdout).unwrap().ends_with("valid\n"));

    let mut bad = labels.clone();
    bad.nodes[5].rank += 3;
    std::fs::write(&lp, bad.export()).unwrap();
    let out = radiobc().args(["validate-gst", "--graph"]).arg(&gp).arg("--labels").arg(&lp).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().contains("invalid"));
}

#[test]
fn diagnose_potential_prints_a_series() {
    let dir = tempfile::tempdir().unwrap();
    let g = generate_graph(&GraphFamily::Path { n: 6 }, 0).unwrap();
    let msgs = vec![Bits::from_bools(&[true, false, true])];
    let r = multi_message_known(&g, 0, &msgs, NoisePolicy::Noise, &Constants::default(), &EngineConfig::with_seed(1)).unwrap();
    let (tp, lp) = (dir.path().join("t.txt"), dir.path().join("l.txt"));
    std::fs::write(&tp, r.trace.export()).unwrap();
    std::fs::write(&lp, r.labels.unwrap().export()).unwrap();
    let out = radiobc()
        .args(["diagnose-potential", "--target", "5", "--trace"])
        .arg(&tp)
        .arg("--labels")
        .arg(&lp)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let phi: Vec<u64> = text.lines().skip(1).map(|l| l.split(' ').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(phi.len() as u64, r.trace.rounds + 1);
    assert_eq!(*phi.last().unwrap(), 0);

    let missing = radiobc().args(["diagnose-potential", "--target", "50", "--trace"]).arg(&tp).arg("--labels").arg(&lp).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn shipped_ablation_configs_match_the_canned_ones() {
    use radiobc::harness::{AblationSchedule, ExperimentConfig};
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    for (file, s) in [("ablation_mmv.toml", AblationSchedule::Mmv), ("ablation_classic_decay.toml", AblationSchedule::ClassicDecay)] {
        let text = std::fs::read_to_string(format!("{dir}/{file}")).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), ExperimentConfig::canned_ablation(s), "{file}");
    }
}
