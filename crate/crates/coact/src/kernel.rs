//! Batched per-step micro-MLP layer over sequences, with a fused final-layer
//! matmul + sum-pool that never materializes the per-step output.
//!
//! Shapes follow the serving layout: weights `[B, K, din, dout]`, inputs
//! `[B, K, S, din]`, bias `[B, K, dout]`. The reference path produces the full
//! `[B, K, S, dout]` tensor; the fused path accumulates straight into
//! `[B, K, dout]`. Both paths add the bias first and then the `din` products
//! in ascending order, and pool in ascending `s`, so their results coincide
//! far inside the mode tolerance.

use std::time::Instant;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Problem size of one batched layer call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchShapes {
    /// Batch size.
    pub b: usize,
    /// Number of feature co-actions.
    pub k: usize,
    /// Sequence length.
    pub s: usize,
    pub din: usize,
    pub dout: usize,
}

impl BatchShapes {
    pub fn new(b: usize, k: usize, s: usize, din: usize, dout: usize) -> Result<Self> {
        if b == 0 || k == 0 || s == 0 || din == 0 || dout == 0 {
            return Err(Error::Config(format!(
                "batch shapes must be positive, got ({b},{k},{s},{din},{dout})"
            )));
        }
        Ok(BatchShapes { b, k, s, din, dout })
    }

    pub fn weight_len(&self) -> usize {
        self.b * self.k * self.din * self.dout
    }

    pub fn input_len(&self) -> usize {
        self.b * self.k * self.s * self.din
    }

    pub fn bias_len(&self) -> usize {
        self.b * self.k * self.dout
    }

    pub fn output_len(&self) -> usize {
        self.b * self.k * self.s * self.dout
    }

    pub fn pooled_len(&self) -> usize {
        self.b * self.k * self.dout
    }

    fn check<T>(&self, w: &[T], x: &[T], bias: &[T]) -> Result<()> {
        if w.len() != self.weight_len() || x.len() != self.input_len() || bias.len() != self.bias_len()
        {
            return Err(Error::dimension(
                "batched layer",
                format!(
                    "W {}, X {}, b {}",
                    self.weight_len(),
                    self.input_len(),
                    self.bias_len()
                ),
                format!("W {}, X {}, b {}", w.len(), x.len(), bias.len()),
            ));
        }
        Ok(())
    }
}

/// Fully materialized per-step layer:
/// `Y[b,k,s,o] = sum_i X[b,k,s,i] * W[b,k,i,o] + bias[b,k,o]`.
pub fn batched_layer_reference<T: Float>(
    w: &[T],
    x: &[T],
    bias: &[T],
    shapes: BatchShapes,
) -> Result<Vec<T>> {
    shapes.check(w, x, bias)?;
    let BatchShapes { b, k, s, din, dout } = shapes;
    let mut y = vec![T::zero(); shapes.output_len()];
    for bi in 0..b {
        for ki in 0..k {
            let w_base = (bi * k + ki) * din * dout;
            let b_base = (bi * k + ki) * dout;
            for si in 0..s {
                let x_base = ((bi * k + ki) * s + si) * din;
                let y_base = ((bi * k + ki) * s + si) * dout;
                for o in 0..dout {
                    let mut acc = bias[b_base + o];
                    for i in 0..din {
                        acc = acc + x[x_base + i] * w[w_base + i * dout + o];
                    }
                    y[y_base + o] = acc;
                }
            }
        }
    }
    Ok(y)
}

/// Sum-pools a reference output over the sequence dimension, ascending `s`.
pub fn sum_pool<T: Float>(y: &[T], shapes: BatchShapes) -> Result<Vec<T>> {
    if y.len() != shapes.output_len() {
        return Err(Error::dimension(
            "sum_pool",
            format!("{}", shapes.output_len()),
            format!("{}", y.len()),
        ));
    }
    let BatchShapes { b, k, s, dout, .. } = shapes;
    let mut z = vec![T::zero(); shapes.pooled_len()];
    for bk in 0..b * k {
        for o in 0..dout {
            let mut acc = T::zero();
            for si in 0..s {
                acc = acc + y[(bk * s + si) * dout + o];
            }
            z[bk * dout + o] = acc;
        }
    }
    Ok(z)
}

/// Fused layer + sum-pool into a caller-provided `[B, K, dout]` buffer.
/// Accumulation runs s-outer, i-inner with one scalar accumulator per
/// `(b, k, o)` cell; nothing proportional to `S x dout` is ever allocated.
pub fn batched_layer_pooled_fused_into<T: Float>(
    w: &[T],
    x: &[T],
    bias: &[T],
    shapes: BatchShapes,
    out: &mut [T],
) -> Result<()> {
    shapes.check(w, x, bias)?;
    if out.len() != shapes.pooled_len() {
        return Err(Error::dimension(
            "fused output",
            format!("{}", shapes.pooled_len()),
            format!("{}", out.len()),
        ));
    }
    let BatchShapes { b, k, s, din, dout } = shapes;
    for bi in 0..b {
        for ki in 0..k {
            let bk = bi * k + ki;
            let w_base = bk * din * dout;
            let b_base = bk * dout;
            for o in 0..dout {
                let mut acc = T::zero();
                for si in 0..s {
                    let x_base = (bk * s + si) * din;
                    let mut step = bias[b_base + o];
                    for i in 0..din {
                        step = step + x[x_base + i] * w[w_base + i * dout + o];
                    }
                    acc = acc + step;
                }
                out[b_base + o] = acc;
            }
        }
    }
    Ok(())
}

/// Allocating convenience wrapper around the fused kernel.
pub fn batched_layer_pooled_fused<T: Float>(
    w: &[T],
    x: &[T],
    bias: &[T],
    shapes: BatchShapes,
) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); shapes.pooled_len()];
    batched_layer_pooled_fused_into(w, x, bias, shapes, &mut out)?;
    Ok(out)
}

/// Float width of a benchmark run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    /// Maximum absolute fused-vs-pooled-reference difference accepted.
    pub fn tolerance(self) -> f64 {
        match self {
            Precision::F32 => 1e-5,
            Precision::F64 => 1e-12,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// One row of the benchmark report.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub shapes: BatchShapes,
    pub mode: Precision,
    /// Median wall time of the reference-then-pool path, milliseconds.
    pub ref_ms: f64,
    /// Median wall time of the fused path, milliseconds.
    pub fused_ms: f64,
    /// Always measured before timing; a wrong kernel never gets a number.
    pub max_abs_diff: f64,
    /// Batch examples per second through the fused path.
    pub throughput: f64,
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.ref_ms / self.fused_ms
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:e},{:.4}",
            self.shapes.b,
            self.shapes.k,
            self.shapes.s,
            self.shapes.din,
            self.shapes.dout,
            self.mode.as_str(),
            self.ref_ms,
            self.fused_ms,
            self.max_abs_diff,
            self.speedup()
        )
    }
}

pub const BENCH_CSV_HEADER: &str = "B,K,S,din,dout,mode,ref_ms,fused_ms,max_abs_diff,speedup";

pub fn bench_csv(reports: &[BenchReport]) -> String {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn random_fill<T: Float>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| T::from(rng.gen_range(-1.0..1.0)).expect("float conversion"))
        .collect()
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    samples[samples.len() / 2]
}

fn bench_shape<T: Float>(
    shapes: BatchShapes,
    repetitions: usize,
    mode: Precision,
    rng: &mut ChaCha8Rng,
) -> Result<BenchReport> {
    let w: Vec<T> = random_fill(rng, shapes.weight_len());
    let x: Vec<T> = random_fill(rng, shapes.input_len());
    let bias: Vec<T> = random_fill(rng, shapes.bias_len());

    // Correctness gate before any timing.
    let reference = batched_layer_reference(&w, &x, &bias, shapes)?;
    let pooled = sum_pool(&reference, shapes)?;
    let fused = batched_layer_pooled_fused(&w, &x, &bias, shapes)?;
    let max_abs_diff = pooled
        .iter()
        .zip(&fused)
        .map(|(a, b)| (*a - *b).abs().to_f64().expect("finite"))
        .fold(0.0, f64::max);
    if max_abs_diff > mode.tolerance() {
        return Err(Error::Numeric(format!(
            "fused kernel diverges from pooled reference: {} > {} at shape {:?}",
            max_abs_diff,
            mode.tolerance(),
            shapes
        )));
    }

    let mut ref_times = Vec::with_capacity(repetitions);
    let mut fused_times = Vec::with_capacity(repetitions);
    let mut out = vec![T::zero(); shapes.pooled_len()];
    for _ in 0..repetitions {
        let t0 = Instant::now();
        let y = batched_layer_reference(&w, &x, &bias, shapes)?;
        let z = sum_pool(&y, shapes)?;
        ref_times.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(&z);

        let t1 = Instant::now();
        batched_layer_pooled_fused_into(&w, &x, &bias, shapes, &mut out)?;
        fused_times.push(t1.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(&out);
    }
    let ref_ms = median(&mut ref_times);
    let fused_ms = median(&mut fused_times);
    Ok(BenchReport {
        shapes,
        mode,
        ref_ms,
        fused_ms,
        max_abs_diff,
        throughput: shapes.b as f64 / (fused_ms / 1e3),
    })
}

/// Runs the reference-vs-fused comparison over a shape grid. Each shape is
/// correctness-checked against the mode tolerance before it is timed.
pub fn run_bench(
    grid: &[BatchShapes],
    repetitions: usize,
    mode: Precision,
    seed: u64,
) -> Result<Vec<BenchReport>> {
    if repetitions < 3 {
        return Err(Error::Config("benchmark needs at least 3 repetitions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grid.iter()
        .map(|&shapes| match mode {
            Precision::F32 => bench_shape::<f32>(shapes, repetitions, mode, &mut rng),
            Precision::F64 => bench_shape::<f64>(shapes, repetitions, mode, &mut rng),
        })
        .collect()
}

/// The default benchmark grid, including the production-like shape
/// B=128, K=48, S=50, din=dout=4.
pub fn default_grid() -> Vec<BatchShapes> {
    [
        (8, 4, 10, 4, 4),
        (32, 8, 50, 4, 4),
        (128, 48, 50, 4, 4),
        (64, 16, 1, 4, 4),
        (16, 8, 25, 8, 1),
    ]
    .iter()
    .map(|&(b, k, s, din, dout)| BatchShapes::new(b, k, s, din, dout).expect("static grid"))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_shapes(s: usize) -> BatchShapes {
        BatchShapes::new(1, 1, s, 1, 1).unwrap()
    }

    #[test]
    fn single_element_layer() {
        let shapes = scalar_shapes(1);
        let y = batched_layer_reference(&[3.0], &[2.0], &[1.0], shapes).unwrap();
        assert_eq!(y, vec![7.0]);
    }

    #[test]
    fn zero_weights_and_bias_give_zero() {
        let shapes = BatchShapes::new(2, 2, 3, 2, 2).unwrap();
        let w = vec![0.0; shapes.weight_len()];
        let x = vec![1.5; shapes.input_len()];
        let b = vec![0.0; shapes.bias_len()];
        let y = batched_layer_reference(&w, &x, &b, shapes).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reference_matches_nested_loop_oracle() {
        // Independent oracle: the five-deep loop written out directly.
        let shapes = BatchShapes::new(2, 3, 5, 4, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w: Vec<f64> = random_fill(&mut rng, shapes.weight_len());
        let x: Vec<f64> = random_fill(&mut rng, shapes.input_len());
        let bias: Vec<f64> = random_fill(&mut rng, shapes.bias_len());
        let y = batched_layer_reference(&w, &x, &bias, shapes).unwrap();

        let BatchShapes { b, k, s, din, dout } = shapes;
        for bi in 0..b {
            for ki in 0..k {
                for si in 0..s {
                    for o in 0..dout {
                        let mut acc = bias[(bi * k + ki) * dout + o];
                        for i in 0..din {
                            acc += x[((bi * k + ki) * s + si) * din + i]
                                * w[(bi * k + ki) * din * dout + i * dout + o];
                        }
                        let got = y[((bi * k + ki) * s + si) * dout + o];
                        assert!((got - acc).abs() < 1e-15, "({bi},{ki},{si},{o})");
                    }
                }
            }
        }
    }

    #[test]
    fn fused_scalar_example() {
        let shapes = scalar_shapes(2);
        let z = batched_layer_pooled_fused(&[3.0], &[1.0, 2.0], &[0.0], shapes).unwrap();
        assert_eq!(z, vec![9.0]);
    }

    #[test]
    fn bias_accumulates_once_per_step() {
        let shapes = scalar_shapes(7);
        let z = batched_layer_pooled_fused(&[0.0], &[1.0; 7], &[0.5], shapes).unwrap();
        assert_eq!(z, vec![3.5]);
    }

    #[test]
    fn fused_matches_pooled_reference_f64() {
        let shapes = BatchShapes::new(8, 4, 50, 4, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let w: Vec<f64> = random_fill(&mut rng, shapes.weight_len());
        let x: Vec<f64> = random_fill(&mut rng, shapes.input_len());
        let bias: Vec<f64> = random_fill(&mut rng, shapes.bias_len());
        let pooled = sum_pool(&batched_layer_reference(&w, &x, &bias, shapes).unwrap(), shapes)
            .unwrap();
        let fused = batched_layer_pooled_fused(&w, &x, &bias, shapes).unwrap();
        for (a, b) in pooled.iter().zip(&fused) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn fused_matches_pooled_reference_f32() {
        let shapes = BatchShapes::new(8, 4, 50, 4, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let w: Vec<f32> = random_fill(&mut rng, shapes.weight_len());
        let x: Vec<f32> = random_fill(&mut rng, shapes.input_len());
        let bias: Vec<f32> = random_fill(&mut rng, shapes.bias_len());
        let pooled = sum_pool(&batched_layer_reference(&w, &x, &bias, shapes).unwrap(), shapes)
            .unwrap();
        let fused = batched_layer_pooled_fused(&w, &x, &bias, shapes).unwrap();
        for (a, b) in pooled.iter().zip(&fused) {
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn degenerate_shapes_still_agree() {
        for shapes in [
            BatchShapes::new(2, 2, 1, 3, 2).unwrap(),
            BatchShapes::new(2, 2, 9, 3, 1).unwrap(),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(33);
            let w: Vec<f64> = random_fill(&mut rng, shapes.weight_len());
            let x: Vec<f64> = random_fill(&mut rng, shapes.input_len());
            let bias: Vec<f64> = random_fill(&mut rng, shapes.bias_len());
            let pooled =
                sum_pool(&batched_layer_reference(&w, &x, &bias, shapes).unwrap(), shapes).unwrap();
            let fused = batched_layer_pooled_fused(&w, &x, &bias, shapes).unwrap();
            for (a, b) in pooled.iter().zip(&fused) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let shapes = BatchShapes::new(1, 1, 2, 2, 2).unwrap();
        let err =
            batched_layer_reference(&[0.0; 3], &[0.0; 4], &[0.0; 2], shapes).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn bench_reports_every_shape_within_tolerance() {
        let grid = [
            BatchShapes::new(2, 2, 4, 4, 4).unwrap(),
            BatchShapes::new(4, 2, 8, 4, 4).unwrap(),
        ];
        let reports = run_bench(&grid, 3, Precision::F64, 99).unwrap();
        assert_eq!(reports.len(), 2);
        for r in &reports {
            assert!(r.max_abs_diff <= Precision::F64.tolerance());
            assert!(r.ref_ms >= 0.0 && r.fused_ms >= 0.0);
        }
        let csv = bench_csv(&reports);
        assert!(csv.starts_with(BENCH_CSV_HEADER));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn too_few_repetitions_is_a_config_error() {
        let grid = [BatchShapes::new(1, 1, 1, 1, 1).unwrap()];
        assert!(matches!(
            run_bench(&grid, 2, Precision::F64, 1),
            Err(Error::Config(_))
        ));
    }
}
