//! One-hidden-layer MLP classification task on 28x28 images.

use std::io::Read;
use std::path::Path;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, DenseVector, RngStream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// Labeled images, one column of `[0,1]` pixels per sample.
#[derive(Debug, Clone)]
pub struct ImageDataset {
    pub images: DenseMatrix,
    pub labels: Vec<usize>,
    /// True when generated rather than read from IDX files.
    pub synthetic: bool,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        Batch {
            images: self.images.select_columns(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Uniformly drawn batch (with replacement across calls).
    pub fn sample_batch(&self, rng: &mut RngStream, size: usize) -> Batch {
        let idx: Vec<usize> = (0..size).map(|_| rng.index(self.len())).collect();
        self.batch(&idx)
    }

    /// Reads an IDX image file and its label file.
    pub fn from_idx(images: &Path, labels: &Path) -> Result<Self> {
        let img = read_idx(images, IDX_IMAGES_MAGIC)?;
        let lab = read_idx(labels, IDX_LABELS_MAGIC)?;
        if img.dims.len() != 3 || lab.dims.len() != 1 {
            return Err(Error::Format {
                offset: 4,
                message: "expected a rank-3 image file and a rank-1 label file".into(),
            });
        }
        let (count, rows, cols) = (img.dims[0], img.dims[1], img.dims[2]);
        if count != lab.dims[0] {
            return Err(Error::Format {
                offset: 4,
                message: format!("{count} images but {} labels", lab.dims[0]),
            });
        }
        let pixels = rows * cols;
        let data = img.bytes.iter().map(|&p| p as f64 / 255.0).collect();
        let labels = lab.bytes.iter().map(|&l| l as usize).collect::<Vec<_>>();
        if let Some(bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::Format {
                offset: 8,
                message: format!("label {bad} out of range"),
            });
        }
        Ok(Self {
            images: DenseMatrix::from_col_major(pixels, count, data)?,
            labels,
            synthetic: false,
        })
    }

    /// Loads `<prefix>-images-idx3-ubyte` / `<prefix>-labels-idx1-ubyte` from
    /// `dir` when both exist, else generates a synthetic set of `fallback_count`.
    pub fn load_or_synthesize(dir: Option<&Path>, prefix: &str, rng: &mut RngStream, fallback_count: usize) -> Result<Self> {
        if let Some(dir) = dir {
            let images = dir.join(format!("{prefix}-images-idx3-ubyte"));
            let labels = dir.join(format!("{prefix}-labels-idx1-ubyte"));
            if images.exists() && labels.exists() {
                return Self::from_idx(&images, &labels);
            }
        }
        Ok(synthetic_digits(rng, fallback_count))
    }
}

/// Mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: DenseMatrix,
    pub labels: Vec<usize>,
}

struct IdxFile {
    dims: Vec<usize>,
    bytes: Vec<u8>,
}

fn read_idx(path: &Path, magic: u32) -> Result<IdxFile> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    parse_idx(&raw, magic)
}

fn parse_idx(raw: &[u8], magic: u32) -> Result<IdxFile> {
    let word = |off: usize| -> Result<u32> {
        raw.get(off..off + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or(Error::Format {
                offset: off as u64,
                message: "truncated IDX header".into(),
            })
    };
    let found = word(0)?;
    if found != magic {
        return Err(Error::Format {
            offset: 0,
            message: format!("IDX magic {found:#010x}, expected {magic:#010x}"),
        });
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim).map(|k| word(4 + 4 * k).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndim;
    let expect: usize = dims.iter().product();
    let body = &raw[header.min(raw.len())..];
    if body.len() != expect {
        return Err(Error::Format {
            offset: header as u64,
            message: format!("IDX payload has {} bytes, expected {expect}", body.len()),
        });
    }
    Ok(IdxFile {
        dims,
        bytes: body.to_vec(),
    })
}

/// Serializes images and labels to the IDX pair layout (used for fixtures).
pub fn encode_idx(images: &[u8], count: usize, side: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [count, side, side] {
        img.extend((d as u32).to_be_bytes());
    }
    img.extend_from_slice(images);
    let mut lab = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
    lab.extend((count as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

/// Ten classes of Gaussian blobs on a 28x28 canvas. Class `k` centers its
/// blob on a ring at angle `2πk/10`; each sample jitters the center, width
/// and adds pixel noise, clamped to `[0, 1]`.
pub fn synthetic_digits(rng: &mut RngStream, count: usize) -> ImageDataset {
    let mut data = Vec::with_capacity(count * IMAGE_PIXELS);
    let mut labels = Vec::with_capacity(count);
    let mid = (IMAGE_SIDE as f64 - 1.0) / 2.0;
    for q in 0..count {
        let class = q % NUM_CLASSES;
        let angle = 2.0 * std::f64::consts::PI * class as f64 / NUM_CLASSES as f64;
        let cx = mid + 8.0 * angle.cos() + rng.normal();
        let cy = mid + 8.0 * angle.sin() + rng.normal();
        let width = 3.0 + 0.5 * rng.uniform();
        for j in 0..IMAGE_SIDE {
            for i in 0..IMAGE_SIDE {
                let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
                let v = (-d2 / (2.0 * width * width)).exp() + 0.05 * rng.normal();
                data.push(v.clamp(0.0, 1.0));
            }
        }
        labels.push(class);
    }
    ImageDataset {
        images: DenseMatrix::from_raw(IMAGE_PIXELS, count, data),
        labels,
        synthetic: true,
    }
}

/// Architecture and initialization of the MLP optimizee.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpTask {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub activation: Activation,
    /// Variance of the Gaussian parameter initialization.
    pub init_var: f64,
}

impl Default for MlpTask {
    fn default() -> Self {
        Self {
            input: IMAGE_PIXELS,
            hidden: 20,
            output: NUM_CLASSES,
            activation: Activation::Sigmoid,
            init_var: 0.01,
        }
    }
}

impl MlpTask {
    /// Flattened layout: `W1 (hidden x input)`, `b1`, `W2 (output x hidden)`, `b2`,
    /// each column-major.
    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    pub fn init_params(&self, rng: &mut RngStream) -> DenseVector {
        DenseVector::from(rng.normal_vec(self.param_count(), 0.0, self.init_var.sqrt()))
    }

    /// Records the mean cross-entropy of `batch` for the flattened
    /// parameter column `params` on `tape`.
    pub fn record<'t>(&self, tape: &'t Tape, params: Var<'t>, batch: &Batch) -> Var<'t> {
        assert!(!batch.labels.is_empty(), "MLP loss on an empty batch");
        assert_eq!(params.rows(), self.param_count(), "MLP parameter count");
        let (h, d, o) = (self.hidden, self.input, self.output);
        let w1 = params.window(0, h, d);
        let b1 = params.window(h * d, h, 1);
        let w2 = params.window(h * d + h, o, h);
        let b2 = params.window(h * d + h + o * h, o, 1);
        let x = tape.constant(batch.images.clone());
        let pre = w1.matmul(x).add_column(b1);
        let hidden = match self.activation {
            Activation::Sigmoid => pre.sigmoid(),
            Activation::Relu => pre.relu(),
        };
        w2.matmul(hidden).add_column(b2).softmax_cross_entropy(&batch.labels)
    }

    pub fn loss(&self, params: &[f64], batch: &Batch) -> f64 {
        let tape = Tape::new();
        let p = tape.constant(DenseMatrix::column_vector(params));
        self.record(&tape, p, batch).item()
    }
}

/// Cross-entropy loss and its gradient with respect to the flattened parameters.
pub fn mlp_loss_and_grad(task: &MlpTask, params: &[f64], batch: &Batch) -> Result<(f64, DenseVector)> {
    if batch.labels.is_empty() {
        return Err(Error::contract("MLP loss on an empty batch"));
    }
    if params.len() != task.param_count() {
        return Err(Error::dims("mlp_loss_and_grad", task.param_count(), params.len()));
    }
    if batch.images.rows() != task.input {
        return Err(Error::dims("mlp_loss_and_grad", task.input, batch.images.rows()));
    }
    let tape = Tape::new();
    let p = tape.var(DenseMatrix::column_vector(params));
    let loss = task.record(&tape, p, batch);
    let g = tape.backward(loss)?.wrt(p);
    Ok((loss.item(), DenseVector::from(g.into_data())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    #[test]
    fn zero_parameters_give_exactly_ln10() {
        let task = MlpTask::default();
        let mut rng = RngStream::new(0);
        let data = synthetic_digits(&mut rng, 40);
        let batch = data.batch(&(0..40).collect::<Vec<_>>());
        let (loss, _) = mlp_loss_and_grad(&task, &vec![0.0; task.param_count()], &batch).unwrap();
        assert!((loss - 10f64.ln()).abs() <= 4.0 * f64::EPSILON, "{loss}");
    }

    #[test]
    fn random_init_is_near_uniform_prediction() {
        let task = MlpTask::default();
        let mut rng = RngStream::new(1);
        let data = synthetic_digits(&mut rng, 100);
        let params = task.init_params(&mut rng);
        let batch = data.batch(&(0..100).collect::<Vec<_>>());
        let (loss, _) = mlp_loss_and_grad(&task, &params, &batch).unwrap();
        assert!((loss - 10f64.ln()).abs() <= 0.3, "{loss}");
    }

    #[test]
    fn gradient_matches_finite_differences_on_small_batch() {
        // a narrower input keeps the finite-difference sweep quick
        for activation in [Activation::Sigmoid, Activation::Relu] {
            let task = MlpTask {
                input: 16,
                hidden: 20,
                output: 10,
                activation,
                init_var: 0.1,
            };
            let mut rng = RngStream::new(2);
            let batch = Batch {
                images: rng.normal_matrix(16, 4, 0.5, 0.3),
                labels: vec![3, 7, 0, 9],
            };
            let p = DenseMatrix::column_vector(&task.init_params(&mut rng));
            let err = grad_check(|t, x| task.record(t, x, &batch), &p);
            assert!(err <= 1e-5, "{activation:?}: {err}");
        }
    }

    #[test]
    fn rejects_empty_batch_and_bad_lengths() {
        let task = MlpTask::default();
        let empty = Batch {
            images: DenseMatrix::zeros(IMAGE_PIXELS, 0),
            labels: vec![],
        };
        assert!(mlp_loss_and_grad(&task, &vec![0.0; task.param_count()], &empty).is_err());
        let mut rng = RngStream::new(3);
        let batch = synthetic_digits(&mut rng, 2).batch(&[0, 1]);
        assert!(mlp_loss_and_grad(&task, &[0.0; 5], &batch).is_err());
    }

    #[test]
    fn idx_round_trip_and_magic_check() {
        let pixels: Vec<u8> = (0..2 * 4).map(|v| (v * 30) as u8).collect();
        let (img, lab) = encode_idx(&pixels, 2, 2, &[1, 9]);
        let parsed = parse_idx(&img, IDX_IMAGES_MAGIC).unwrap();
        assert_eq!(parsed.dims, vec![2, 2, 2]);
        assert_eq!(parsed.bytes, pixels);
        assert!(parse_idx(&lab, IDX_IMAGES_MAGIC).is_err());
        assert!(parse_idx(&img[..img.len() - 1], IDX_IMAGES_MAGIC).is_err());

        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t-images-idx3-ubyte"), &img).unwrap();
        std::fs::write(dir.path().join("t-labels-idx1-ubyte"), &lab).unwrap();
        let mut rng = RngStream::new(0);
        let ds = ImageDataset::load_or_synthesize(Some(dir.path()), "t", &mut rng, 5).unwrap();
        assert!(!ds.synthetic);
        assert_eq!(ds.labels, vec![1, 9]);
        assert_eq!(ds.images.shape(), (4, 2));
        assert_eq!(ds.images.get(1, 0), 30.0 / 255.0);
        let fallback = ImageDataset::load_or_synthesize(Some(dir.path()), "missing", &mut rng, 5).unwrap();
        assert!(fallback.synthetic);
        assert_eq!(fallback.len(), 5);
    }

    #[test]
    fn synthetic_set_is_balanced_and_bounded() {
        let mut rng = RngStream::new(4);
        let ds = synthetic_digits(&mut rng, 100);
        for k in 0..10 {
            assert_eq!(ds.labels.iter().filter(|&&l| l == k).count(), 10);
        }
        assert!(ds.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
