use sparsedyn::instance_io::{
    decode, decode_header, dump, encode, load, read_header_from, VERSION,
};
use sparsedyn::LabError;
use sparsedyn_core::{generate_instance, Prior};

fn prior() -> Prior {
    Prior::bernoulli_gaussian(0.1, 1.0).unwrap()
}

#[test]
fn round_trip_through_a_file() {
    let inst = generate_instance(50, 0.5, 0.01, &prior(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inst.bin");
    dump(&inst, &path).unwrap();
    let back = load(&path, prior()).unwrap();
    assert_eq!(back, inst);
    let h = read_header_from(&path).unwrap();
    assert_eq!(
        (h.version, h.m, h.n, h.seed, h.sigma0_2),
        (VERSION, 25, 50, 9, 0.01)
    );
    assert_eq!(
        std::fs::metadata(&path).unwrap().len() as usize,
        44 + 8 * (25 * 50 + 50 + 2 * 25)
    );
}

#[test]
fn corruption_is_reported() {
    let inst = generate_instance(20, 0.5, 0.0, &prior(), 1).unwrap();
    let bytes = encode(&inst);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad, prior()), Err(LabError::Format(_))));

    let mut bad = bytes.clone();
    bad[8] = 2;
    assert!(matches!(decode_header(&bad), Err(LabError::Format(_))));

    assert!(matches!(
        decode(&bytes[..bytes.len() - 3], prior()),
        Err(LabError::Format(_))
    ));

    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode(&long, prior()), Err(LabError::Format(_))));

    // flip a bit of the last stored y entry
    let mut bad = bytes.clone();
    let last = bad.len() - 1;
    bad[last] ^= 0x01;
    assert!(matches!(decode(&bad, prior()), Err(LabError::Format(_))));

    // absurd dimensions must not allocate
    let mut bad = bytes;
    bad[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(decode(&bad, prior()).is_err());
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load(std::path::Path::new("/nonexistent/inst.bin"), prior()).unwrap_err();
    assert!(matches!(err, LabError::Io { .. }));
}
