use std::collections::BTreeMap;
use std::path::Path;

use herbage::assets::{load_library, AssetError, Manifest, ManifestEntry};
use herbage::SpeciesSet;
use serde_json::json;

fn write_png(path: &Path, w: u32, h: u32, rgba: [u8; 4]) {
    image::RgbaImage::from_pixel(w, h, image::Rgba(rgba)).save(path).unwrap();
}

fn entry(file: &str, species: &str) -> ManifestEntry {
    ManifestEntry {
        file: file.into(),
        species: species.into(),
        mask: None,
    }
}

fn write_manifest(dir: &Path, assets: BTreeMap<String, ManifestEntry>) -> std::path::PathBuf {
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string(&Manifest { assets }).unwrap()).unwrap();
    path
}

/// 78 cutouts split 40/22/16 over grass, clover and weeds, plus `n_bg` backgrounds.
fn paper_sized(dir: &Path, n_bg: usize) -> std::path::PathBuf {
    let mut assets = BTreeMap::new();
    let split = [("grass", 40), ("clover", 22), ("weeds", 16)];
    for (species, n) in split {
        for i in 0..n {
            let file = format!("{species}_{i:02}.png");
            write_png(&dir.join(&file), 6 + i as u32 % 5, 7, [10, 200, 10, 255]);
            assets.insert(format!("{species}_{i:02}"), entry(&file, species));
        }
    }
    for i in 0..n_bg {
        let file = format!("bg_{i}.png");
        write_png(&dir.join(&file), 32, 32, [90, 70, 50, 255]);
        assets.insert(format!("bg_{i}"), entry(&file, "soil"));
    }
    write_manifest(dir, assets)
}

#[test]
fn loads_seventy_eight_samples_and_eight_backgrounds() {
    let dir = tempfile::tempdir().unwrap();
    let lib = load_library(&paper_sized(dir.path(), 8), &SpeciesSet::irish()).unwrap();
    assert_eq!(lib.n_samples(), 78);
    assert_eq!(lib.backgrounds().len(), 8);
    let counts = lib.counts();
    assert_eq!(counts.iter().map(|(_, n)| n).sum::<usize>(), 78);
    assert_eq!(
        counts,
        vec![("grass".to_string(), 40), ("clover".to_string(), 22), ("weeds".to_string(), 16)]
    );
}

#[test]
fn loading_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = paper_sized(dir.path(), 2);
    let a = load_library(&path, &SpeciesSet::irish()).unwrap();
    let b = load_library(&path, &SpeciesSet::irish()).unwrap();
    for id in SpeciesSet::irish().species_ids() {
        let ids = |l: &herbage::assets::AssetLibrary| l.samples_of(id).iter().map(|s| s.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
        assert_eq!(a.samples_of(id), b.samples_of(id));
    }
}

#[test]
fn no_backgrounds_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_library(&paper_sized(dir.path(), 0), &SpeciesSet::irish()).unwrap_err();
    assert!(matches!(err, AssetError::NoBackgrounds), "{err}");
    assert!(err.to_string().contains("no backgrounds"));
}

#[test]
fn unknown_species_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_png(&dir.path().join("s.png"), 4, 4, [0, 0, 0, 255]);
    write_png(&dir.path().join("b.png"), 8, 8, [0, 0, 0, 255]);
    let mut assets = BTreeMap::new();
    assets.insert("s".to_string(), entry("s.png", "shamrock"));
    assets.insert("b".to_string(), entry("b.png", "soil"));
    let err = load_library(&write_manifest(dir.path(), assets), &SpeciesSet::irish()).unwrap_err();
    assert!(matches!(err, AssetError::UnknownSpecies { ref species, .. } if species == "shamrock"));
}

#[test]
fn alpha_sources_in_priority_order() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Alpha channel only: left column transparent.
    let mut img = image::RgbaImage::from_pixel(4, 2, image::Rgba([1, 2, 3, 255]));
    img.put_pixel(0, 0, image::Rgba([1, 2, 3, 0]));
    img.put_pixel(0, 1, image::Rgba([1, 2, 3, 0]));
    img.save(d.join("a.png")).unwrap();
    // Sibling mask overrides the alpha channel.
    img.save(d.join("b.png")).unwrap();
    image::GrayImage::from_pixel(4, 2, image::Luma([200])).save(d.join("b_mask.png")).unwrap();
    // Explicit mask beats the sibling.
    img.save(d.join("c.png")).unwrap();
    image::GrayImage::from_pixel(4, 2, image::Luma([255])).save(d.join("c_mask.png")).unwrap();
    let mut explicit = image::GrayImage::from_pixel(4, 2, image::Luma([0]));
    explicit.put_pixel(3, 1, image::Luma([255]));
    explicit.save(d.join("c_custom.png")).unwrap();
    // Plain RGB with no mask is opaque.
    image::RgbImage::from_pixel(3, 3, image::Rgb([5, 5, 5])).save(d.join("d.png")).unwrap();
    write_png(&d.join("bg.png"), 8, 8, [0, 0, 0, 255]);

    let mut assets = BTreeMap::new();
    assets.insert("a".to_string(), entry("a.png", "grass"));
    assets.insert("b".to_string(), entry("b.png", "grass"));
    assets.insert(
        "c".to_string(),
        ManifestEntry {
            mask: Some("c_custom.png".into()),
            ..entry("c.png", "grass")
        },
    );
    assets.insert("d".to_string(), entry("d.png", "grass"));
    assets.insert("bg".to_string(), entry("bg.png", "soil"));
    let lib = load_library(&write_manifest(d, assets), &SpeciesSet::new(["soil", "grass"]).unwrap()).unwrap();
    let by_id = |id: &str| lib.samples_of(herbage::SpeciesId(1)).iter().find(|s| s.id == id).unwrap().clone();
    assert_eq!(by_id("a").alpha.as_slice(), &[0, 255, 255, 255, 0, 255, 255, 255]);
    assert!(by_id("b").alpha.as_slice().iter().all(|&a| a == 200));
    assert_eq!(by_id("c").alpha.as_slice(), &[0, 0, 0, 0, 0, 0, 0, 255]);
    assert!(by_id("d").alpha.as_slice().iter().all(|&a| a == 255));
}

#[test]
fn broken_manifests_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let species = SpeciesSet::irish();
    assert!(matches!(
        load_library(&dir.path().join("nope.json"), &species),
        Err(AssetError::Manifest { .. })
    ));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"assets\": 3}").unwrap();
    assert!(matches!(load_library(&bad, &species), Err(AssetError::ManifestFormat { .. })));
    let missing = dir.path().join("missing.json");
    std::fs::write(&missing, json!({"assets": {"x": {"file": "x.png", "species": "grass"}}}).to_string()).unwrap();
    assert!(matches!(load_library(&missing, &species), Err(AssetError::MissingFile { .. })));
    std::fs::write(dir.path().join("x.png"), b"not a png").unwrap();
    assert!(matches!(load_library(&missing, &species), Err(AssetError::Undecodable { .. })));
}
