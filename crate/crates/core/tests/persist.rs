use rcrc_core::cma_es::{CmaEs, CmaEsConfig, Objective};
use rcrc_core::controller::{ActionMode, ControllerWeights};
use rcrc_core::error::Error;
use rcrc_core::fixed_conv::ConvSpec;
use rcrc_core::persist::{Checkpoint, ModelSpec, OptimizerBlob, FORMAT_VERSION};
use rcrc_core::reservoir::ReservoirSpec;

fn optimizer() -> CmaEs {
    let mut es = CmaEs::new(vec![0.5; 6], &CmaEsConfig { sigma0: 0.3, seed: 4, ..Default::default() }).unwrap();
    for _ in 0..3 {
        let mut c = es.ask();
        for x in &mut c {
            x.fitness = Some(x.params.iter().map(|v| v * v).sum());
        }
        es.tell(&c, Objective::Minimize).unwrap();
    }
    // Leave a cached normal in the generator.
    es.ask();
    es
}

fn sample(with_optimizer: bool) -> Checkpoint {
    let weights: Vec<f64> = (0..3 * 9).map(|i| (i as f64 * 0.37).sin() * 1e-3 + f64::EPSILON * i as f64).collect();
    Checkpoint::new(
        ModelSpec {
            conv: ConvSpec::default().with_dense_out(4),
            extractor_seed: 11,
            reservoir: ReservoirSpec {
                input_dim: 4,
                state_dim: 4,
                ..Default::default()
            },
            reservoir_seed: 12,
        },
        ControllerWeights::from_flat(ActionMode::Continuous3, 9, weights).unwrap(),
        with_optimizer.then(|| OptimizerBlob(optimizer())),
        3,
        Some(-12.5),
        "env.kind = track_runner\n",
    )
}

#[test]
fn round_trip_is_bitwise() {
    for opt in [false, true] {
        let c = sample(opt);
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        let a: Vec<u64> = c.controller.as_flat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.controller.as_flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn restored_optimizer_continues_identically() {
    let c = sample(true);
    let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
    let (mut a, mut b) = (c.optimizer.unwrap().0, back.optimizer.unwrap().0);
    assert_eq!(a.ask(), b.ask());
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    let c = sample(true);
    c.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), c);
}

#[test]
fn unknown_version_is_rejected() {
    let mut bytes = sample(false).to_bytes();
    bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    let err = Checkpoint::from_bytes(&bytes).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
}

#[test]
fn truncated_weights_report_expected_and_actual_bytes() {
    let bytes = sample(false).to_bytes();
    let cut = &bytes[..bytes.len() - 20];
    let msg = Checkpoint::from_bytes(cut).unwrap_err().to_string();
    // CTRL payload: 1 mode byte, two u32 dims, 27 floats.
    let full = 1 + 4 + 4 + 27 * 8;
    assert!(msg.contains("CTRL"), "{msg}");
    assert!(msg.contains(&format!("expected {full} bytes")), "{msg}");
    assert!(msg.contains(&format!("found {}", full - 20)), "{msg}");
}

#[test]
fn short_weight_payload_with_consistent_length_is_rejected() {
    let c = sample(false);
    let mut bytes = c.to_bytes();
    // Rewrite the CTRL section to carry one float fewer than declared.
    let ctrl = bytes.windows(4).rposition(|w| w == b"CTRL").unwrap();
    let len = u64::from_le_bytes(bytes[ctrl + 4..ctrl + 12].try_into().unwrap());
    bytes[ctrl + 4..ctrl + 12].copy_from_slice(&(len - 8).to_le_bytes());
    bytes.truncate(bytes.len() - 8);
    let msg = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
    assert!(msg.contains("needs 216 bytes") && msg.contains("has 208"), "{msg}");
}

#[test]
fn corruption_is_detected() {
    let bytes = sample(false).to_bytes();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad_magic), Err(Error::Checkpoint(_))));
    // Flip a byte of the stored config text so it no longer matches its hash.
    let mut tampered = bytes.clone();
    let pos = tampered.windows(8).position(|w| w == b"env.kind").unwrap();
    tampered[pos] = b'E';
    assert!(Checkpoint::from_bytes(&tampered).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..5]).is_err());
}

#[test]
fn config_hash_detects_mismatch() {
    let c = sample(false);
    c.check_config("env.kind = track_runner\n").unwrap();
    assert!(c.check_config("env.kind = dodge_ball\n").is_err());
}
