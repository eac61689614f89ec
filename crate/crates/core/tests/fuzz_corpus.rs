//! Replays the checked-in fuzz corpus through the same entry points as the
//! fuzz targets, plus random mutations of each seed, on a stable toolchain.

use std::path::PathBuf;

use hybridflow::config::RunConfigFile;
use hybridflow::dataset::Dataset;
use hybridflow::hybrid::read_records;
use hybridflow::surrogate::ClusteredSurrogate;
use hybridflow::Network;
use proptest::prelude::*;

fn network_toml(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(net) = Network::from_toml_str(text) {
            let again = Network::from_toml_str(&net.to_toml_string()).unwrap();
            assert_eq!(net.n_bus(), again.n_bus());
        }
    }
}

fn dataset_csv(data: &[u8]) {
    let _ = Dataset::read_from(data);
}

fn surrogate_json(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(s) = ClusteredSurrogate::from_json(text) {
            let _ = s.predict(&vec![0.0; s.n_inputs]);
        }
    }
}

fn run_config(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = RunConfigFile::from_toml_str(text);
    }
}

fn records_csv(data: &[u8]) {
    let _ = read_records(data);
}

type Target = fn(&[u8]);

const TARGETS: [(&str, Target); 5] = [
    ("network_toml", network_toml),
    ("dataset_csv", dataset_csv),
    ("surrogate_json", surrogate_json),
    ("run_config", run_config),
    ("records_csv", records_csv),
];

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths.into_iter().map(|p| std::fs::read(p).unwrap()).collect()
}

#[test]
fn corpus_seeds_are_accepted() {
    assert!(Network::from_toml_str(std::str::from_utf8(&seeds("network_toml")[0]).unwrap()).is_ok());
    for s in seeds("surrogate_json") {
        assert!(ClusteredSurrogate::from_json(std::str::from_utf8(&s).unwrap()).is_ok());
    }
    for s in seeds("run_config") {
        assert!(RunConfigFile::from_toml_str(std::str::from_utf8(&s).unwrap()).is_ok());
    }
    for s in seeds("dataset_csv") {
        assert!(Dataset::read_from(s.as_slice()).is_ok());
    }
    for s in seeds("records_csv") {
        assert!(read_records(s.as_slice()).is_ok());
    }
}

#[test]
fn corpus_replays_without_panic() {
    for (name, f) in TARGETS {
        let seeds = seeds(name);
        assert!(!seeds.is_empty(), "no seeds for {name}");
        for s in &seeds {
            f(s);
            // Every prefix, which covers truncated files.
            for cut in (0..s.len()).step_by(7) {
                f(&s[..cut]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mutated_seeds_never_panic(target in 0usize..5, seed in any::<prop::sample::Index>(), edits in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..8)) {
        let (name, f) = TARGETS[target];
        let all = seeds(name);
        let mut data = seed.get(&all).clone();
        if !data.is_empty() {
            for (at, byte) in edits {
                let i = at.index(data.len());
                data[i] = byte;
            }
        }
        f(&data);
    }

    #[test]
    fn arbitrary_bytes_never_panic(target in 0usize..5, data in prop::collection::vec(any::<u8>(), 0..512)) {
        (TARGETS[target].1)(&data);
    }
}

/// Collects the JSON pointer of every array in `v`.
fn array_paths(v: &serde_json::Value, path: &mut Vec<String>, out: &mut Vec<String>) {
    match v {
        serde_json::Value::Array(items) => {
            out.push(format!("/{}", path.join("/")));
            for (i, x) in items.iter().enumerate() {
                path.push(i.to_string());
                array_paths(x, path, out);
                path.pop();
            }
        }
        serde_json::Value::Object(map) => {
            for (k, x) in map {
                path.push(k.clone());
                array_paths(x, path, out);
                path.pop();
            }
        }
        _ => {}
    }
}

#[test]
fn surrogate_with_any_array_shortened_never_panics() {
    for seed in seeds("surrogate_json") {
        let value: serde_json::Value = serde_json::from_slice(&seed).unwrap();
        let mut paths = Vec::new();
        array_paths(&value, &mut Vec::new(), &mut paths);
        for p in paths {
            for op in 0..2 {
                let mut v = value.clone();
                let arr = v.pointer_mut(&p).unwrap().as_array_mut().unwrap();
                if op == 0 {
                    arr.pop();
                } else if let Some(first) = arr.first().cloned() {
                    arr.push(first);
                }
                let text = serde_json::to_string(&v).unwrap();
                surrogate_json(text.as_bytes());
            }
        }
    }
}
