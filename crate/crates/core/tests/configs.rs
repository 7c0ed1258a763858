//! The JSON files under `configs/` are the presets, written out.
//! Regenerate with `MODNO_WRITE_CONFIGS=1 cargo test -p modno-core --test configs`.

use std::path::PathBuf;

use modno::bench::ExperimentConfig;

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn committed_configs_match_presets() {
    let write = std::env::var_os("MODNO_WRITE_CONFIGS").is_some();
    for name in ["exp1", "exp2", "exp3", "exp4", "exp5"] {
        let preset = ExperimentConfig::preset(name).unwrap();
        let path = config_dir().join(format!("{name}.json"));
        if write {
            std::fs::write(&path, preset.to_json().unwrap() + "\n").unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let parsed = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(parsed, preset, "{name}.json drifted from the preset");
        assert_eq!(parsed.content_hash().unwrap(), preset.content_hash().unwrap());
    }
}
