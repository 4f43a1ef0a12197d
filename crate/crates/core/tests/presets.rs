use std::path::Path;

use dgfn_core::experiment::{preset, preset_names, ExperimentConfig};

fn presets_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets"))
}

#[test]
fn shipped_files_match_builtin_presets() {
    for name in preset_names() {
        let path = presets_dir().join(format!("{name}.toml"));
        let loaded = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(Some(loaded), preset(&name), "{name}");
    }
}

#[test]
fn no_stray_preset_files() {
    let names = preset_names();
    for entry in std::fs::read_dir(presets_dir()).unwrap() {
        let path = entry.unwrap().path();
        let stem = path.file_stem().unwrap().to_str().unwrap().to_string();
        assert!(
            names.contains(&stem),
            "{} is not a built-in preset",
            path.display()
        );
    }
}

#[test]
fn presets_round_trip_through_toml() {
    for name in preset_names() {
        let p = preset(&name).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&p.to_toml()).unwrap(), p);
    }
}
