use std::fs;

use facebias_core::io::{
    latent_block_len, read_latent_block, read_manifest, write_latent_block, write_manifest, Manifest,
};
use facebias_core::model::{AgeBins, Dataset, FaceRecord, Gender, Labels, LatentVector, Provenance};
use facebias_core::oracles::{
    read_ids, read_response, serve_request, write_ids, ExternalOracle, Oracle, OracleSpec, SyntheticOracle,
    SyntheticOracleConfig,
};
use facebias_core::Error;
use proptest::prelude::*;

#[test]
fn latent_block_sizes_follow_the_layout() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.latb");
    write_latent_block(&empty, 7, &[]).unwrap();
    assert_eq!(fs::metadata(&empty).unwrap().len(), 12);
    let (dim, vs) = read_latent_block(&empty).unwrap();
    assert_eq!((dim, vs.len()), (7, 0));

    let big = dir.path().join("big.latb");
    let vs: Vec<LatentVector> = (0..5000)
        .map(|i| LatentVector::new((0..512).map(|k| ((i * 512 + k) % 97) as f64 * 0.25).collect()).unwrap())
        .collect();
    write_latent_block(&big, 512, &vs).unwrap();
    let expected = 12 + 5000 * 512 * 4;
    assert_eq!(fs::metadata(&big).unwrap().len(), expected);
    assert_eq!(latent_block_len(5000, 512), Some(expected));
    let bytes = fs::read(&big).unwrap();
    assert_eq!(&bytes[..4], b"LATB");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 5000);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 512);
    // First float of row 1 is (512 % 97) * 0.25.
    let off = 12 + 512 * 4;
    assert_eq!(
        f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()),
        (512 % 97) as f32 * 0.25
    );
    assert_eq!(read_latent_block(&big).unwrap().1, vs);
}

fn gender() -> impl Strategy<Value = Gender> {
    prop_oneof![Just(Gender::Male), Just(Gender::Female)]
}

prop_compose! {
    fn record_parts(dim: usize)(
        latent in prop::collection::vec(-1e3f32..1e3, dim),
        age in 0.0f64..90.0,
        gender in gender(),
        quality in -5.0f64..5.0,
        kind in 0u8..3,
        step in 0.0f64..1.0,
    ) -> (Vec<f32>, f64, Gender, f64, u8, f64) {
        (latent, age, gender, quality, kind, step)
    }
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..6).prop_flat_map(|dim| {
        prop::collection::vec(record_parts(dim), 1..30).prop_map(move |parts| {
            let mut ds = Dataset::new(dim, AgeBins::default());
            for (i, (latent, age, gender, quality, kind, step)) in parts.into_iter().enumerate() {
                let z = LatentVector::new(latent.into_iter().map(f64::from).collect()).unwrap();
                let labels = Labels {
                    age_years: age,
                    gender,
                    quality_raw: quality,
                };
                let mut r = FaceRecord::original(format!("id{i}"), z, labels, &ds.age_bins).unwrap();
                // Later records descend from earlier ones.
                if i >= 2 && kind == 1 {
                    r.provenance = Provenance::Line;
                    r.parents = vec![format!("id{}", i - 2), format!("id{}", i - 1)];
                    r.step = Some(step);
                } else if i >= 1 && kind == 2 {
                    r.provenance = Provenance::Sphere;
                    r.parents = vec![format!("id{}", i - 1)];
                }
                ds.records.push(r);
            }
            ds.refresh_quality_percentiles();
            ds
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn manifest_round_trip_is_lossless(ds in dataset_strategy(), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.csv");
        let m = Manifest {
            seed,
            oracle: Some(OracleSpec::Synthetic(SyntheticOracleConfig { seed, ..Default::default() })),
            dataset: ds,
        };
        write_manifest(&path, &m).unwrap();
        let back = read_manifest(&path).unwrap();
        prop_assert_eq!(back, m);
    }
}

fn request(dim: usize, n: usize) -> (Vec<String>, Vec<LatentVector>) {
    let ids = (0..n).map(|i| format!("q{i:03}")).collect();
    let latents = (0..n)
        .map(|i| {
            LatentVector::new((0..dim).map(|k| ((i * 7 + k * 3) % 11) as f64 / 5.0 - 1.0).collect())
                .unwrap()
                .quantized()
        })
        .collect();
    (ids, latents)
}

#[test]
fn served_request_matches_in_process_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let (ids, latents) = request(12, 40);
    let latents_path = dir.path().join("req.latb");
    let ids_path = dir.path().join("req.ids");
    let out = dir.path().join("resp.csv");
    write_latent_block(&latents_path, 12, &latents).unwrap();
    write_ids(&ids_path, &ids).unwrap();
    assert_eq!(read_ids(&ids_path).unwrap(), ids);

    let spec: OracleSpec = "synthetic:seed=4,beta=0.5".parse().unwrap();
    serve_request(&latents_path, &ids_path, &out, &spec).unwrap();
    let served = read_response(&out, &ids).unwrap();
    let cfg = match &spec {
        OracleSpec::Synthetic(c) => c.clone(),
        OracleSpec::Command(_) => unreachable!(),
    };
    let direct = SyntheticOracle::new(12, cfg).unwrap().classify(&ids, &latents).unwrap();
    assert_eq!(served, direct);

    // The response echoes ids in request order, one row each.
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ids.iter().map(String::as_str).collect::<Vec<_>>());
}

#[test]
fn served_request_rejects_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (ids, latents) = request(4, 5);
    let lp = dir.path().join("req.latb");
    let ip = dir.path().join("req.ids");
    write_latent_block(&lp, 4, &latents).unwrap();
    write_ids(&ip, &ids[..3]).unwrap();
    let spec = OracleSpec::Synthetic(SyntheticOracleConfig::default());
    assert!(serve_request(&lp, &ip, &dir.path().join("o.csv"), &spec).is_err());
}

#[test]
fn response_with_reordered_ids_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("resp.csv");
    fs::write(&p, "id,age_years,gender,quality_raw\nb,20,male,0.5\na,30,female,0.1\n").unwrap();
    let ids = vec!["a".to_string(), "b".to_string()];
    assert!(read_response(&p, &ids).is_err());
    fs::write(&p, "id,age_years,gender,quality_raw\na,20,male,0.5\n").unwrap();
    assert!(read_response(&p, &ids).is_err());
    fs::write(&p, "id,age,gender,quality\na,20,male,0.5\nb,1,male,1\n").unwrap();
    assert!(read_response(&p, &ids).is_err());
}

#[test]
fn failing_commands_surface_as_oracle_errors() {
    let (ids, latents) = request(3, 2);
    let missing = ExternalOracle::from_command_line("/nonexistent/facebias-adapter").unwrap();
    assert!(matches!(missing.classify(&ids, &latents), Err(Error::Oracle(_))));
    let failing = ExternalOracle::from_command_line("false").unwrap();
    assert!(matches!(failing.classify(&ids, &latents), Err(Error::Oracle(_))));
    // Exits 0 without writing a response.
    let silent = ExternalOracle::from_command_line("true").unwrap();
    assert!(matches!(silent.classify(&ids, &latents), Err(Error::Oracle(_))));
    // Empty requests never start the program.
    assert!(missing.classify(&[], &[]).unwrap().is_empty());
}
