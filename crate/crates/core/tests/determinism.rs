mod common;

use tpa3d::config::RunConfig;
use tpa3d::model::Tpa3d;
use tpa3d::text::{load_embeddings, save_embeddings, ToyTextEncoder};

#[test]
fn identical_outputs_and_bit_exact_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    common::determinism_and_round_trips(dir.path()).assert();
}

#[test]
fn different_seeds_give_different_weights() {
    let config = common::small_config();
    let a = Tpa3d::new(&config).unwrap();
    let b = Tpa3d::new(&RunConfig { seed: 1, ..config }).unwrap();
    assert_ne!(a.generator.constant.value(), b.generator.constant.value());
}

#[test]
fn imported_embeddings_drive_generation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("captions.tpaemb");
    let config = common::small_config();
    let enc = ToyTextEncoder::new(config.text.clone()).unwrap();
    let captions = ["a red sphere", "a blue box"];
    let entries: Vec<_> = captions.iter().map(|c| (c.to_string(), enc.encode_str(c).0)).collect();
    save_embeddings(&path, &entries).unwrap();
    let loaded = load_embeddings(&path, &config.text).unwrap();
    assert_eq!(loaded.len(), 2);

    let toy = Tpa3d::new(&config).unwrap();
    let imported = Tpa3d::new(&RunConfig { embeddings: Some(path), ..config }).unwrap();
    for c in captions {
        let stored = common::to_f32(&toy.encode(c).unwrap());
        assert_eq!(imported.encode(c).unwrap(), stored);
        let (x, y) = (toy.generate_features(stored, 3).unwrap().output, imported.generate(c, 3).unwrap().output);
        assert_eq!(x.geo.values(), y.geo.values());
        assert_eq!(x.tex.values(), y.tex.values());
    }
    assert!(imported.generate("a green torus", 3).is_err());
}

#[test]
fn malformed_embedding_files_are_rejected() {
    let config = common::small_config();
    let enc = ToyTextEncoder::new(config.text.clone()).unwrap();
    let mut bytes = Vec::new();
    tpa3d::text::write_embeddings(&mut bytes, &[("a red sphere".into(), enc.encode_str("a red sphere").0)]).unwrap();
    for cut in [0, 4, 8, bytes.len() / 2, bytes.len() - 1] {
        assert!(tpa3d::text::read_embeddings(&bytes[..cut]).is_err(), "truncated at {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(tpa3d::text::read_embeddings(bad.as_slice()).is_err());
}
