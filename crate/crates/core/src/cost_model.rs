//! Prefill cost estimate for a decoder-only transformer.
//!
//! ```text
//! flops        = 2 P n + 2 L n^2 d
//! prefill_time = flops / (utilization * peak_throughput)
//! weights      = P * bytes_per_weight
//! kv_cache     = 2 L n d * bytes_per_weight
//! activations  = c_act * n d L * bytes_per_weight
//! total_memory = weights + kv_cache + activations
//! ```
//!
//! FLOPs do not depend on precision. Quantized presets instead carry the
//! higher integer peak throughput of the accelerator, so only time and
//! memory shrink. `c_act` is a calibration constant, not a derived one.
//! Memory is reported in bytes; the text report uses decimal GB (1e9).

use std::fmt::Write as _;
use std::path::Path;

use crate::config::KeyValues;
use crate::error::{Error, Result};

pub const DEFAULT_ACTIVATION_FACTOR: f64 = 16.0;
pub const A100_FP16_PEAK: f64 = 312e12;
pub const A100_INT8_PEAK: f64 = 624e12;
pub const A100_INT4_PEAK: f64 = 1248e12;
pub const A100_HBM_BANDWIDTH: f64 = 2.039e12;
pub const A100_UTILIZATION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub params: f64,
    pub layers: f64,
    pub d_model: f64,
    pub bytes_per_weight: f64,
    /// FLOP/s
    pub peak_throughput: f64,
    /// bytes/s
    pub hbm_bandwidth: f64,
    /// Fraction of peak achieved during prefill.
    pub utilization: f64,
    /// `c_act`
    pub activation_factor: f64,
}

const PRESET_KEYS: &[&str] = &[
    "name",
    "params",
    "layers",
    "d_model",
    "bytes_per_weight",
    "peak_throughput",
    "hbm_bandwidth",
    "utilization",
    "activation_factor",
];

impl ModelSpec {
    fn vicuna_7b(suffix: &str, bytes_per_weight: f64, peak: f64) -> Self {
        Self {
            name: format!("vicuna-7b-{suffix}"),
            params: 7.0e9,
            layers: 32.0,
            d_model: 4096.0,
            bytes_per_weight,
            peak_throughput: peak,
            hbm_bandwidth: A100_HBM_BANDWIDTH,
            utilization: A100_UTILIZATION,
            activation_factor: DEFAULT_ACTIVATION_FACTOR,
        }
    }

    /// Built-in presets: Vicuna-7B on an A100 at FP16, INT8 and INT4.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "vicuna-7b-fp16" => Some(Self::vicuna_7b("fp16", 2.0, A100_FP16_PEAK)),
            "vicuna-7b-int8" => Some(Self::vicuna_7b("int8", 1.0, A100_INT8_PEAK)),
            "vicuna-7b-int4" => Some(Self::vicuna_7b("int4", 0.5, A100_INT4_PEAK)),
            _ => None,
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["vicuna-7b-fp16", "vicuna-7b-int8", "vicuna-7b-int4"]
    }

    /// Reads a preset from `key=value` text. `utilization` defaults to 1.0
    /// and `activation_factor` to 16.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.reject_unknown(PRESET_KEYS)?;
        let spec = Self {
            name: kv.get("name").unwrap_or("custom").to_string(),
            params: kv.required("params")?,
            layers: kv.required("layers")?,
            d_model: kv.required("d_model")?,
            bytes_per_weight: kv.required("bytes_per_weight")?,
            peak_throughput: kv.required("peak_throughput")?,
            hbm_bandwidth: kv.required("hbm_bandwidth")?,
            utilization: kv.parsed("utilization")?.unwrap_or(1.0),
            activation_factor: kv
                .parsed("activation_factor")?
                .unwrap_or(DEFAULT_ACTIVATION_FACTOR),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("params", self.params),
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("bytes_per_weight", self.bytes_per_weight),
            ("peak_throughput", self.peak_throughput),
            ("hbm_bandwidth", self.hbm_bandwidth),
            ("utilization", self.utilization),
            ("activation_factor", self.activation_factor),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.utilization > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "utilization {} exceeds 1",
                self.utilization
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub n_tokens: usize,
    pub flops: f64,
    /// seconds
    pub prefill_time: f64,
    pub weight_memory: f64,
    pub kv_cache_memory: f64,
    pub activation_memory: f64,
    pub total_memory: f64,
    /// Time to stream weights and KV cache once at HBM bandwidth, seconds.
    pub memory_time: f64,
}

impl CostReport {
    pub fn to_text(&self, spec: &ModelSpec) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model:              {}", spec.name);
        let _ = writeln!(s, "tokens:             {}", self.n_tokens);
        let _ = writeln!(s, "FLOPs (T):          {:.3}", self.flops / 1e12);
        let _ = writeln!(s, "prefill time (ms):  {:.3}", self.prefill_time * 1e3);
        let _ = writeln!(s, "memory time (ms):   {:.3}", self.memory_time * 1e3);
        let _ = writeln!(s, "weights (GB):       {:.3}", self.weight_memory / 1e9);
        let _ = writeln!(s, "kv cache (GB):      {:.3}", self.kv_cache_memory / 1e9);
        let _ = writeln!(s, "activations (GB):   {:.3}", self.activation_memory / 1e9);
        let _ = writeln!(s, "total memory (GB):  {:.3}", self.total_memory / 1e9);
        s
    }

    pub fn to_csv(&self, spec: &ModelSpec) -> String {
        format!(
            "model,tokens,flops,prefill_time_s,memory_time_s,weight_bytes,kv_cache_bytes,activation_bytes,total_memory_bytes\n{},{},{},{},{},{},{},{},{}\n",
            spec.name,
            self.n_tokens,
            self.flops,
            self.prefill_time,
            self.memory_time,
            self.weight_memory,
            self.kv_cache_memory,
            self.activation_memory,
            self.total_memory
        )
    }
}

pub fn estimate(spec: &ModelSpec, n_tokens: usize) -> Result<CostReport> {
    spec.validate()?;
    if n_tokens < 1 {
        return Err(Error::InvalidArgument(
            "token count must be at least 1".into(),
        ));
    }
    let n = n_tokens as f64;
    let flops = 2.0 * spec.params * n + 2.0 * spec.layers * n * n * spec.d_model;
    let weight_memory = spec.params * spec.bytes_per_weight;
    let kv_cache_memory = 2.0 * spec.layers * n * spec.d_model * spec.bytes_per_weight;
    let activation_memory =
        spec.activation_factor * n * spec.d_model * spec.layers * spec.bytes_per_weight;
    Ok(CostReport {
        n_tokens,
        flops,
        prefill_time: flops / (spec.utilization * spec.peak_throughput),
        weight_memory,
        kv_cache_memory,
        activation_memory,
        total_memory: weight_memory + kv_cache_memory + activation_memory,
        memory_time: (weight_memory + kv_cache_memory) / spec.hbm_bandwidth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp16() -> ModelSpec {
        ModelSpec::builtin("vicuna-7b-fp16").unwrap()
    }

    #[test]
    fn single_token_is_linear_term() {
        let r = estimate(&fp16(), 1).unwrap();
        assert_eq!(r.flops, 2.0 * 7.0e9 + 2.0 * 32.0 * 4096.0);
        assert!((r.flops / 14.0e9 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn doubling_tokens_roughly_doubles_flops() {
        let a = estimate(&fp16(), 100).unwrap().flops;
        let b = estimate(&fp16(), 200).unwrap().flops;
        assert!((b / a - 2.0).abs() < 0.06);
        assert!(b / a > 2.0);
    }

    #[test]
    fn quantization_halves_weights_and_kv_only() {
        let mut half = fp16();
        half.bytes_per_weight = 1.0;
        let a = estimate(&fp16(), 636).unwrap();
        let b = estimate(&half, 636).unwrap();
        assert_eq!(b.weight_memory * 2.0, a.weight_memory);
        assert_eq!(b.kv_cache_memory * 2.0, a.kv_cache_memory);
        assert_eq!(a.flops, b.flops);
    }

    #[test]
    fn preset_text_round_trip() {
        let text = "name = tiny\nparams=1e6\nlayers=2\nd_model=64\nbytes_per_weight=2\npeak_throughput=1e12\nhbm_bandwidth=1e11\n";
        let spec = ModelSpec::from_kv_str(text).unwrap();
        assert_eq!(spec.name, "tiny");
        assert_eq!(spec.utilization, 1.0);
        assert_eq!(spec.activation_factor, 16.0);
        assert!(ModelSpec::from_kv_str("params=1\n").is_err());
        assert!(ModelSpec::from_kv_str(&format!("{text}bogus=1\n")).is_err());
        assert!(ModelSpec::from_kv_str(&format!("{text}utilization=0\n")).is_err());
    }

    #[test]
    fn rejects_zero_tokens() {
        assert!(estimate(&fp16(), 0).is_err());
    }

    #[test]
    fn unknown_preset() {
        assert!(ModelSpec::builtin("gpt-5").is_none());
        for name in ModelSpec::builtin_names() {
            assert_eq!(&ModelSpec::builtin(name).unwrap().name, name);
        }
    }
}
