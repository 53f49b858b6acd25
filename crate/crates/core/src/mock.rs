//! Deterministic synthetic backend.
//!
//! Each catalog artwork owns one axis of a style space. Generating from a
//! prompt tokenizes it and counts, per artwork, how often its cue phrases
//! (title, artist, motif names) occur; the image is the normalized weighted
//! sum of those axes, optionally perturbed by seeded jitter. Semantics and
//! fidelity score the cosine against the reference axis, aesthetics scores
//! `1 - cosine`.

use std::fmt::Write as _;

use crate::backend::{BackendError, Generator, ImageHandle, Proximity};
use crate::catalog::Catalog;
use crate::metric::MetricRegistry;
use crate::metric::{MetricSpec, AESTHETICS, FIDELITY, SEMANTICS};
use crate::seed;
use crate::text::{count_phrase, tokens};

const HANDLE_PREFIX: &str = "mock:";

#[derive(Debug, Clone)]
struct Axis {
    id: String,
    cues: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    axes: Vec<Axis>,
    jitter: f64,
}

impl MockBackend {
    pub fn new(catalog: &Catalog) -> Self {
        Self::with_jitter(catalog, 0.0)
    }

    pub fn with_jitter(catalog: &Catalog, jitter: f64) -> Self {
        let axes = catalog
            .records()
            .iter()
            .map(|r| {
                let mut cues = vec![tokens(&r.title), tokens(&r.artist)];
                cues.extend(r.motifs.iter().map(|m| tokens(&m.name)));
                cues.retain(|c| !c.is_empty());
                Axis { id: r.id.clone(), cues }
            })
            .collect();
        Self { axes, jitter }
    }

    pub fn dimension(&self) -> usize {
        self.axes.len()
    }

    /// Metrics the mock serves, with the built-in orientations.
    pub fn metrics() -> Vec<MetricSpec> {
        let reg = MetricRegistry::builtin();
        [SEMANTICS, AESTHETICS, FIDELITY]
            .iter()
            .map(|k| reg.resolve(k).expect("builtin").clone())
            .collect()
    }

    /// Un-normalized cue counts of `prompt` per artwork axis.
    pub fn cue_weights(&self, prompt: &str) -> Vec<f64> {
        let words = tokens(prompt);
        self.axes
            .iter()
            .map(|a| a.cues.iter().map(|c| count_phrase(&words, c)).sum::<usize>() as f64)
            .collect()
    }

    /// Style vector of sample `index` for `(prompt, seed)`.
    pub fn style_vector(&self, prompt: &str, request_seed: u64, index: u32) -> Vec<f64> {
        let mut v = self.cue_weights(prompt);
        if self.jitter != 0.0 {
            let s = seed::sample_seed(request_seed, index);
            for (i, x) in v.iter_mut().enumerate() {
                let u = seed::unit_f64(seed::derive(s, &[seed::tag::JITTER, i as u64]));
                *x += self.jitter * (2.0 * u - 1.0);
            }
        }
        normalize(&mut v);
        v
    }

    /// Encodes a vector as a handle: `mock:` then `index=hexbits` pairs for
    /// every non-zero component.
    pub fn encode_handle(v: &[f64]) -> ImageHandle {
        let mut s = String::from(HANDLE_PREFIX);
        let mut first = true;
        for (i, x) in v.iter().enumerate() {
            if *x != 0.0 {
                if !first {
                    s.push(',');
                }
                first = false;
                write!(s, "{i}={:016x}", x.to_bits()).expect("string write");
            }
        }
        s
    }

    /// The mock's own accessor for handle contents.
    pub fn decode_handle(&self, handle: &str) -> Result<Vec<f64>, BackendError> {
        let bad = || BackendError::Worker {
            request_id: String::new(),
            message: format!("not a mock image handle: `{handle}`"),
        };
        let body = handle.strip_prefix(HANDLE_PREFIX).ok_or_else(bad)?;
        let mut v = vec![0.0; self.axes.len()];
        for part in body.split(',').filter(|p| !p.is_empty()) {
            let (i, bits) = part.split_once('=').ok_or_else(bad)?;
            let i: usize = i.parse().map_err(|_| bad())?;
            let bits = u64::from_str_radix(bits, 16).map_err(|_| bad())?;
            *v.get_mut(i).ok_or_else(bad)? = f64::from_bits(bits);
        }
        Ok(v)
    }

    fn axis_of(&self, reference: &str) -> Option<usize> {
        self.axes.iter().position(|a| a.id == reference)
    }

    /// Cosine between `v` and the unit axis of `reference`.
    pub fn cosine(&self, v: &[f64], reference: &str) -> Result<f64, BackendError> {
        let axis = self.axis_of(reference).ok_or_else(|| BackendError::Worker {
            request_id: String::new(),
            message: format!("unknown reference `{reference}`"),
        })?;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(if norm == 0.0 { 0.0 } else { v[axis] / norm })
    }

    pub fn score(&self, v: &[f64], reference: &str, metric: &str) -> Result<f64, BackendError> {
        let cos = self.cosine(v, reference)?;
        match metric {
            SEMANTICS | FIDELITY => Ok(cos),
            AESTHETICS => Ok(1.0 - cos),
            other => Err(BackendError::Worker {
                request_id: String::new(),
                message: format!("unsupported metric `{other}`"),
            }),
        }
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

impl Generator for MockBackend {
    fn generate(&self, prompt: &str, k: u32, seed: u64) -> Result<Vec<ImageHandle>, BackendError> {
        Ok((0..k)
            .map(|i| Self::encode_handle(&self.style_vector(prompt, seed, i)))
            .collect())
    }
}

impl Proximity for MockBackend {
    fn proximity(&self, image: &str, reference: &str, metric: &str) -> Result<f64, BackendError> {
        let v = self.decode_handle(image)?;
        self.score(&v, reference, metric)
    }
}
