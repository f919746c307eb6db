//! The JSON files under `corpus/` must match the generated families.
//! Run with `GRAPH_VORTEX_WRITE_CORPUS=1` to regenerate them.

use std::path::PathBuf;

use graph_vortex::instance::{bundled_corpus, parse_instance};

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

#[test]
fn corpus_files_match_generators() {
    let dir = corpus_dir();
    let write = std::env::var_os("GRAPH_VORTEX_WRITE_CORPUS").is_some();
    for (stem, file) in bundled_corpus() {
        let path = dir.join(format!("{stem}.json"));
        if write {
            std::fs::write(&path, serde_json::to_string_pretty(&file).unwrap() + "\n").unwrap();
        }
        let on_disk = parse_instance(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let expected = file.validate().unwrap();
        assert_eq!(on_disk.graph.ids(), expected.graph.ids(), "{stem}");
        assert_eq!(on_disk.graph.mu(), expected.graph.mu(), "{stem}");
        assert_eq!(on_disk.graph.edges(), expected.graph.edges(), "{stem}");
        assert_eq!(on_disk.vortices, expected.vortices, "{stem}");
    }
}
