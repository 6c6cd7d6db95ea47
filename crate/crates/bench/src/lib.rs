//! Wall-clock comparison of the convolution paths.
//!
//! Every algorithm is checked against the direct convolution with the same
//! padding before it is timed; a benchmark of outputs that disagree is
//! reported as an error instead of a number.

use std::fmt;
use std::time::Instant;

use cycnn::conv::{conv2d, ConvAlgorithm, ConvSpec, FilterBank, PadMode};
use cycnn::tensor::{Shape, Tensor};
use cycnn::winograd::{DIRECT_MULS_PER_TILE, WINOGRAD_MULS_PER_TILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest tolerated `|winograd - direct|` in single precision.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("repeats must be at least 3, got {0}")]
    TooFewRepeats(usize),
    #[error(
        "{algorithm} disagrees with the direct path on {geometry}: max abs diff {max_abs:.3e}, \
         mean abs diff {mean_abs:.3e} (tolerance {tolerance:.1e})"
    )]
    Mismatch {
        geometry: Geometry,
        algorithm: BenchAlgorithm,
        max_abs: f64,
        mean_abs: f64,
        tolerance: f64,
    },
    #[error(transparent)]
    Conv(#[from] cycnn::Error),
}

/// Batch `n` of `c x h x w` inputs convolved to `out_channels` with 3x3
/// filters, stride 1, pad 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub out_channels: usize,
}

impl Geometry {
    pub fn new(n: usize, c: usize, h: usize, w: usize, out_channels: usize) -> Self {
        Geometry {
            n,
            c,
            h,
            w,
            out_channels,
        }
    }

    /// Floating-point operations of the direct algorithm, counting a
    /// multiply-add as two.
    pub fn flops(&self) -> f64 {
        2.0 * (self.n * self.out_channels * self.c * 9 * self.h * self.w) as f64
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}->{}",
            self.n, self.c, self.h, self.w, self.out_channels
        )
    }
}

impl std::str::FromStr for Geometry {
    type Err = String;

    /// Parses `NxCxHxW->O`.
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("geometry '{s}' is not of the form NxCxHxW->O");
        let (dims, out) = s.split_once("->").ok_or_else(bad)?;
        let dims: Vec<usize> = dims
            .split('x')
            .map(|d| d.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let out: usize = out.trim().parse().map_err(|_| bad())?;
        match dims[..] {
            [n, c, h, w] if n * c * h * w * out > 0 => Ok(Geometry::new(n, c, h, w, out)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchAlgorithm {
    DirectZero,
    DirectCylindrical,
    WinogradZero,
    WinogradCylindrical,
}

impl BenchAlgorithm {
    pub const ALL: [BenchAlgorithm; 4] = [
        BenchAlgorithm::DirectZero,
        BenchAlgorithm::DirectCylindrical,
        BenchAlgorithm::WinogradZero,
        BenchAlgorithm::WinogradCylindrical,
    ];

    pub fn pad_mode(self) -> PadMode {
        match self {
            BenchAlgorithm::DirectZero | BenchAlgorithm::WinogradZero => PadMode::Zero,
            _ => PadMode::Cylindrical,
        }
    }

    pub fn conv_algorithm(self) -> ConvAlgorithm {
        match self {
            BenchAlgorithm::DirectZero | BenchAlgorithm::DirectCylindrical => ConvAlgorithm::Direct,
            _ => ConvAlgorithm::Winograd,
        }
    }

    pub fn spec(self, g: &Geometry) -> ConvSpec {
        ConvSpec::same3x3(g.c, g.out_channels, self.pad_mode())
            .with_algorithm(self.conv_algorithm())
    }
}

impl fmt::Display for BenchAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchAlgorithm::DirectZero => "direct-zero",
            BenchAlgorithm::DirectCylindrical => "direct-cylindrical",
            BenchAlgorithm::WinogradZero => "winograd",
            BenchAlgorithm::WinogradCylindrical => "cywino",
        })
    }
}

impl std::str::FromStr for BenchAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        BenchAlgorithm::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| {
                format!("unknown algorithm '{s}' (direct-zero|direct-cylindrical|winograd|cywino)")
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub geometry: Geometry,
    pub algorithm: BenchAlgorithm,
    pub median_ms: f64,
    pub gflops: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("geometry,algorithm,median_ms,gflops,threads\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.4},{:.3},{}\n",
                r.geometry, r.algorithm, r.median_ms, r.gflops, r.threads
            ));
        }
        out
    }

    pub fn median_ms(&self, geometry: &Geometry, algorithm: BenchAlgorithm) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.geometry == *geometry && r.algorithm == algorithm)
            .map(|r| r.median_ms)
    }

    /// `time(slow) / time(fast)` on one geometry.
    pub fn time_ratio(
        &self,
        geometry: &Geometry,
        slow: BenchAlgorithm,
        fast: BenchAlgorithm,
    ) -> Option<f64> {
        Some(self.median_ms(geometry, slow)? / self.median_ms(geometry, fast)?)
    }
}

/// Multiplications saved per 2x2 output tile: 36 direct vs 16 Winograd.
pub fn multiply_reduction() -> f64 {
    DIRECT_MULS_PER_TILE as f64 / WINOGRAD_MULS_PER_TILE as f64
}

fn random_problem(g: &Geometry, seed: u64) -> (Tensor<f32>, Tensor<f32>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(Shape::new(g.n, g.c, g.h, g.w), |_| rng.gen_range(-1.0..1.0));
    let w = Tensor::from_fn(Shape::new(g.out_channels, g.c, 3, 3), |_| {
        rng.gen_range(-1.0..1.0)
    });
    let b = (0..g.out_channels)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    (x, w, b)
}

/// Runs the equivalence gate, then times each algorithm `repeats` times
/// after `warmup` untimed runs.
pub fn bench_conv(
    geometries: &[Geometry],
    algorithms: &[BenchAlgorithm],
    repeats: usize,
    warmup: usize,
) -> Result<BenchReport, BenchError> {
    bench_conv_with(geometries, algorithms, repeats, warmup, |x, f, spec| {
        conv2d(x, f, spec)
    })
}

/// [`bench_conv`] with a caller-supplied convolution, so the gate itself can
/// be exercised with a faulty implementation.
pub fn bench_conv_with(
    geometries: &[Geometry],
    algorithms: &[BenchAlgorithm],
    repeats: usize,
    warmup: usize,
    run: impl Fn(&Tensor<f32>, &FilterBank<f32>, &ConvSpec) -> cycnn::Result<Tensor<f32>>,
) -> Result<BenchReport, BenchError> {
    if repeats < 3 {
        return Err(BenchError::TooFewRepeats(repeats));
    }
    let mut report = BenchReport::default();
    for (gi, g) in geometries.iter().enumerate() {
        let (x, w, b) = random_problem(g, gi as u64);
        let filters = FilterBank::new(w, b)?;
        for &alg in algorithms {
            let spec = alg.spec(g);
            let reference = conv2d(&x, &filters, &spec.with_algorithm(ConvAlgorithm::Direct))?;
            let out = run(&x, &filters, &spec)?;
            let diffs: Vec<f64> = out
                .data()
                .iter()
                .zip(reference.data())
                .map(|(a, b)| (*a as f64 - *b as f64).abs())
                .collect();
            let max_abs = diffs.iter().cloned().fold(0.0, f64::max);
            if out.shape() != reference.shape() || !(max_abs <= EQUIVALENCE_TOLERANCE) {
                return Err(BenchError::Mismatch {
                    geometry: *g,
                    algorithm: alg,
                    max_abs,
                    mean_abs: diffs.iter().sum::<f64>() / diffs.len().max(1) as f64,
                    tolerance: EQUIVALENCE_TOLERANCE,
                });
            }
            for _ in 0..warmup {
                std::hint::black_box(run(&x, &filters, &spec)?);
            }
            let mut times = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let t = Instant::now();
                std::hint::black_box(run(&x, &filters, &spec)?);
                times.push(t.elapsed().as_secs_f64() * 1e3);
            }
            times.sort_by(f64::total_cmp);
            let median_ms = times[times.len() / 2];
            report.rows.push(BenchRow {
                geometry: *g,
                algorithm: alg,
                median_ms,
                gflops: g.flops() / (median_ms * 1e-3) / 1e9,
                threads: 1,
            });
        }
    }
    Ok(report)
}
