use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::TabularDataset;
use crate::grad::{mlp_forward, DenseLayer, Matrix};
use crate::loss::Targets;
use crate::Result;

/// The frozen network that generated a teacher-student dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub noise_std: f64,
    pub seed: u64,
    pub layers: Vec<DenseLayer>,
}

impl TeacherSpec {
    /// Noise-free teacher output.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(mlp_forward(&self.layers, x)?.output)
    }
}

fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let values = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::new(rows, cols, values).expect("normal samples are finite")
}

/// Regression data from a random frozen ReLU teacher with one output:
/// `X ~ N(0, I)`, `y = teacher(X) + N(0, noise_std^2)`.
///
/// Teacher weights are He-uniform and biases uniform in `[-0.5, 0.5)`.
pub fn make_teacher_student(
    input_dim: usize,
    teacher_widths: &[usize],
    n_rows: usize,
    noise_std: f64,
    seed: u64,
) -> Result<TabularDataset> {
    if teacher_widths.is_empty() || teacher_widths.contains(&0) {
        return Err(crate::Error::Argument("teacher needs at least one non-empty hidden layer".into()));
    }
    if input_dim == 0 || n_rows == 0 {
        return Err(crate::Error::Argument("teacher dataset needs rows and inputs".into()));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(crate::Error::Argument(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut widths = vec![input_dim];
    widths.extend_from_slice(teacher_widths);
    widths.push(1);
    let layers: Vec<DenseLayer> = widths
        .windows(2)
        .map(|w| {
            let mut l = DenseLayer::he_uniform(w[0], w[1], &mut rng);
            for b in &mut l.bias {
                *b = rng.random_range(-0.5..0.5);
            }
            l
        })
        .collect();
    let x = normal_matrix(&mut rng, n_rows, input_dim);
    let mut y = mlp_forward(&layers, &x)?.output;
    if noise_std > 0.0 {
        for v in y.as_mut_slice() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += noise_std * e;
        }
    }
    let mut ds = TabularDataset::new(
        x,
        Targets::Regression(y),
        (0..input_dim).map(|i| format!("x{i}")).collect(),
        vec!["y".into()],
    )?;
    ds.meta.teacher = Some(TeacherSpec {
        input_dim,
        hidden_widths: teacher_widths.to_vec(),
        noise_std,
        seed,
        layers,
    });
    Ok(ds)
}

/// Two classes of uniform points separated by a hyperplane through the origin
/// with a gap of `2 * margin` along a random unit normal.
pub fn make_separable_classification(input_dim: usize, n_rows: usize, margin: f64, seed: u64) -> Result<TabularDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal: Vec<f64> = {
        let v: Vec<f64> = (0..input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    };
    let mut values = Vec::with_capacity(n_rows * input_dim);
    let mut labels = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let mut x: Vec<f64> = (0..input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let proj: f64 = x.iter().zip(&normal).map(|(a, b)| a * b).sum();
        let label = usize::from(proj >= 0.0);
        let shift = if label == 1 { margin } else { -margin };
        for (xi, ni) in x.iter_mut().zip(&normal) {
            *xi += shift * ni;
        }
        values.extend(x);
        labels.push(label);
    }
    TabularDataset::new(
        Matrix::new(n_rows, input_dim, values)?,
        Targets::Classification { labels, n_classes: 2 },
        (0..input_dim).map(|i| format!("x{i}")).collect(),
        vec!["class".into()],
    )
}
