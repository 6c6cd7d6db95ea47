use cycnn::conv::{conv2d, ConvAlgorithm};
use cycnn_bench::*;

fn small() -> Vec<Geometry> {
    vec![Geometry::new(1, 3, 8, 8, 4), Geometry::new(2, 8, 16, 12, 8)]
}

#[test]
fn report_has_stable_structure() {
    let report = bench_conv(&small(), &BenchAlgorithm::ALL, 3, 1).unwrap();
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "geometry,algorithm,median_ms,gflops,threads");
    assert_eq!(lines.len(), 1 + 2 * 4);
    let keys: Vec<String> = lines[1..]
        .iter()
        .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(
        keys,
        [
            "1x3x8x8->4,direct-zero",
            "1x3x8x8->4,direct-cylindrical",
            "1x3x8x8->4,winograd",
            "1x3x8x8->4,cywino",
            "2x8x16x12->8,direct-zero",
            "2x8x16x12->8,direct-cylindrical",
            "2x8x16x12->8,winograd",
            "2x8x16x12->8,cywino",
        ]
    );
    for r in &report.rows {
        assert!(r.median_ms > 0.0 && r.gflops > 0.0);
        assert_eq!(r.threads, 1);
    }
    let ratio = report
        .time_ratio(
            &small()[0],
            BenchAlgorithm::DirectCylindrical,
            BenchAlgorithm::DirectZero,
        )
        .unwrap();
    assert!(ratio.is_finite());
}

#[test]
fn gate_rejects_non_equivalent_outputs() {
    let faulty = |x: &_, f: &_, spec: &cycnn::ConvSpec| {
        let mut y = conv2d(x, f, spec)?;
        if spec.algorithm == ConvAlgorithm::Winograd {
            y.data_mut()[0] += 0.5;
        }
        Ok(y)
    };
    match bench_conv_with(&small(), &BenchAlgorithm::ALL, 3, 0, faulty) {
        Err(BenchError::Mismatch {
            algorithm, max_abs, ..
        }) => {
            assert_eq!(algorithm, BenchAlgorithm::WinogradZero);
            assert!((max_abs - 0.5).abs() < 1e-3);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn too_few_repeats() {
    assert!(matches!(
        bench_conv(&small(), &[BenchAlgorithm::DirectZero], 2, 0),
        Err(BenchError::TooFewRepeats(2))
    ));
}
