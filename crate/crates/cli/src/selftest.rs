use anyhow::{bail, Result};
use cycnn::conv::{conv2d_backward, conv2d_direct, ConvAlgorithm, ConvSpec, FilterBank, PadMode};
use cycnn::tensor::{cyclic_shift_rows, Scalar, Shape, Tensor};
use cycnn::winograd::{conv2d_winograd_with, WinogradTransforms};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{CheckFailed, SelftestArgs};

const CASES: usize = 20;
const GRADIENT_TOLERANCE: f64 = 1e-4;

fn random_tensor<T: Scalar>(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-1.0..1.0)))
}

fn random_filters<T: Scalar>(spec: &ConvSpec, rng: &mut ChaCha8Rng) -> FilterBank<T> {
    let weights = random_tensor(spec.weight_shape(), rng);
    let bias = (0..spec.out_channels)
        .map(|_| T::from_f64(rng.gen_range(-1.0..1.0)))
        .collect();
    FilterBank::new(weights, bias).expect("shapes agree")
}

fn random_case<T: Scalar>(
    rng: &mut ChaCha8Rng,
    mode: PadMode,
) -> (Tensor<T>, FilterBank<T>, ConvSpec) {
    let n = rng.gen_range(1..=2);
    let c = rng.gen_range(1..=4);
    let o = rng.gen_range(1..=4);
    let h = 2 * rng.gen_range(2..=6);
    let w = 2 * rng.gen_range(2..=6);
    let spec = ConvSpec::same3x3(c, o, mode);
    let x = random_tensor(Shape([n, c, h, w]), rng);
    let f = random_filters(&spec, rng);
    (x, f, spec)
}

/// Largest Winograd-vs-direct difference over random zero and cylindrical cases.
fn winograd_equivalence<T: Scalar>(
    rng: &mut ChaCha8Rng,
    transforms: &WinogradTransforms,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..CASES {
        let mode = if i % 2 == 0 {
            PadMode::Zero
        } else {
            PadMode::Cylindrical
        };
        let (x, f, spec) = random_case::<T>(rng, mode);
        let direct = conv2d_direct(&x, &f, &spec)?;
        let wino = conv2d_winograd_with(
            &x,
            &f,
            &spec.with_algorithm(ConvAlgorithm::Winograd),
            transforms,
        )?;
        worst = worst.max(direct.max_abs_diff(&wino)?);
    }
    Ok(worst)
}

/// Largest difference between `conv(shift(x))` and `shift(conv(x))`.
fn equivariance<T: Scalar>(rng: &mut ChaCha8Rng, algorithm: ConvAlgorithm) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let (x, f, spec) = random_case::<T>(rng, PadMode::Cylindrical);
        let spec = spec.with_algorithm(algorithm);
        let h = x.shape().0[2] as i64;
        let k = match algorithm {
            // Tiles start on even rows, so only even shifts line them up.
            ConvAlgorithm::Winograd => 2 * rng.gen_range(0..h / 2),
            ConvAlgorithm::Direct => rng.gen_range(0..h),
        };
        let a = cycnn::conv2d(&cyclic_shift_rows(&x, k), &f, &spec)?;
        let b = cyclic_shift_rows(&cycnn::conv2d(&x, &f, &spec)?, k);
        worst = worst.max(a.max_abs_diff(&b)?);
    }
    Ok(worst)
}

/// Worst relative error of analytic convolution gradients against central
/// differences of `sum(y * r)` for a fixed random `r`.
fn gradients(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0.0f64;
    for mode in [PadMode::Zero, PadMode::Cylindrical] {
        let (x, f, spec) = random_case::<f64>(rng, mode);
        let y = conv2d_direct(&x, &f, &spec)?;
        let r: Tensor<f64> = random_tensor(y.shape(), rng);
        let objective = |x: &Tensor<f64>, f: &FilterBank<f64>| -> Result<f64> {
            Ok(conv2d_direct(x, f, &spec)?.dot(&r)?)
        };
        let g = conv2d_backward(&x, &f, &r, &spec)?;
        let eps = 1e-6;
        let rel = |analytic: f64, numeric: f64| {
            (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
        };
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let numeric = (objective(&xp, &f)? - objective(&xm, &f)?) / (2.0 * eps);
            worst = worst.max(rel(g.grad_x.data()[i], numeric));
        }
        for i in 0..f.weights.data().len() {
            let mut fp = f.clone();
            fp.weights.data_mut()[i] += eps;
            let mut fm = f.clone();
            fm.weights.data_mut()[i] -= eps;
            let numeric = (objective(&x, &fp)? - objective(&x, &fm)?) / (2.0 * eps);
            worst = worst.max(rel(g.grad_w.data()[i], numeric));
        }
        for i in 0..f.bias.len() {
            let mut fp = f.clone();
            fp.bias[i] += eps;
            let mut fm = f.clone();
            fm.bias[i] -= eps;
            let numeric = (objective(&x, &fp)? - objective(&x, &fm)?) / (2.0 * eps);
            worst = worst.max(rel(g.grad_b[i], numeric));
        }
    }
    Ok(worst)
}

fn run_suites<T: Scalar>(
    seed: u64,
    transforms: &WinogradTransforms,
    tolerance: f64,
) -> Result<Vec<(&'static str, f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        (
            "winograd-equivalence",
            winograd_equivalence::<T>(&mut rng, transforms)?,
            tolerance,
        ),
        (
            "cylindrical-equivariance",
            equivariance::<T>(&mut rng, ConvAlgorithm::Direct)?,
            0.0,
        ),
        (
            "cywino-equivariance",
            equivariance::<T>(&mut rng, ConvAlgorithm::Winograd)?,
            0.0,
        ),
        ("gradients", gradients(&mut rng)?, GRADIENT_TOLERANCE),
    ])
}

pub fn run(a: SelftestArgs) -> Result<()> {
    let mut transforms = WinogradTransforms::STANDARD;
    match a.inject_fault.as_deref() {
        None => {}
        Some("winograd") => transforms.g[1][1] += 0.25,
        Some(other) => bail!("unknown fault '{other}' (winograd)"),
    }
    let results = match a.precision.as_str() {
        "double" => run_suites::<f64>(a.seed, &transforms, 1e-10)?,
        "single" => run_suites::<f32>(a.seed, &transforms, 1e-4)?,
        other => bail!("unknown precision '{other}' (single|double)"),
    };
    let mut failed = Vec::new();
    for (name, err, tol) in results {
        let ok = err <= tol;
        println!(
            "{} {name}: max error {err:.3e} (tolerance {tol:.0e})",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CheckFailed(format!("selftest failed: {}", failed.join(", "))).into())
    }
}
